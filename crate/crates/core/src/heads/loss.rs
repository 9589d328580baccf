//! Per-document training losses.
//!
//! * `L1 = (ŷ − ỹ)²`
//! * `L2 = (min ã)²`
//! * `L3 = (max ã − ỹ)²`
//! * `L_ranked = mean_{top}(ã_i − ỹ)² + mean_{rest} ã_i²`, where `top` holds
//!   the `⌈k·N/100⌉` highest scores (at least one, ties to the lower index).
//!
//! Weighted: `L1 + γ(L2 + L3)`. Ranked: `L1 + γ(L2 + L3) + γ_ranked·L_ranked`.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::LossVariant;
use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Values of the individual loss terms for one document.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub ranked: Option<f64>,
    pub total: f64,
}

impl std::fmt::Display for LossTerms {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "L1={} L2={} L3={}", self.l1, self.l2, self.l3)?;
        if let Some(r) = self.ranked {
            write!(f, " L_ranked={r}")?;
        }
        write!(f, " total={}", self.total)
    }
}

/// Size of the supervised top set: `⌈k·N/100⌉`, at least 1 and at most N.
pub fn top_k_count(n: usize, k: f64) -> usize {
    let raw = (k * n as f64 / 100.0 - 1e-9).ceil();
    (raw.max(1.0) as usize).min(n)
}

/// Indices of the top-k% scores and of the rest, each in ascending index
/// order. Ties in score go to the lower index.
pub fn ranked_partition(scores: &[f64], k: f64) -> (Vec<usize>, Vec<usize>) {
    let count = top_k_count(scores.len(), k);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut top = order[..count].to_vec();
    let mut rest = order[count..].to_vec();
    top.sort_unstable();
    rest.sort_unstable();
    (top, rest)
}

fn weighted_terms(g: &mut Graph, y_hat: Var, scores: Var, gold: f64) -> Result<(Var, Var, Var)> {
    if g.value(scores).is_empty() {
        return Err(Error::Invalid("loss needs at least one token".into()));
    }
    let dy = g.add_const(y_hat, -gold)?;
    let l1 = g.square(dy)?;
    let mn = g.min(scores)?;
    let l2 = g.square(mn)?;
    let mx = g.max(scores)?;
    let dm = g.add_const(mx, -gold)?;
    let l3 = g.square(dm)?;
    Ok((l1, l2, l3))
}

fn masked_mean(g: &mut Graph, sq: Var, idx: &[usize], n: usize) -> Result<Var> {
    let mut mask = vec![0.0; n];
    for &i in idx {
        mask[i] = 1.0;
    }
    let m = g.constant(Tensor::vector(mask));
    let prod = g.mul(sq, m)?;
    let s = g.sum(prod)?;
    g.scale(s, 1.0 / idx.len() as f64)
}

fn ranked_term(g: &mut Graph, scores: Var, gold: f64, k: f64) -> Result<Var> {
    let vals = g.value(scores).data().to_vec();
    let n = vals.len();
    let (top, rest) = ranked_partition(&vals, k);
    let diff = g.add_const(scores, -gold)?;
    let sq_top = g.square(diff)?;
    let top_mean = masked_mean(g, sq_top, &top, n)?;
    if rest.is_empty() {
        return Ok(top_mean);
    }
    let sq_rest = g.square(scores)?;
    let rest_mean = masked_mean(g, sq_rest, &rest, n)?;
    g.add(top_mean, rest_mean)
}

/// Graph node for the weighted loss; returns the total and the term values.
pub fn loss_weighted_graph(g: &mut Graph, y_hat: Var, scores: Var, gold: f64, gamma: f64) -> Result<(Var, LossTerms)> {
    let (l1, l2, l3) = weighted_terms(g, y_hat, scores, gold)?;
    let token = g.add(l2, l3)?;
    let token = g.scale(token, gamma)?;
    let total = g.add(l1, token)?;
    let terms = LossTerms {
        l1: g.value(l1).item(),
        l2: g.value(l2).item(),
        l3: g.value(l3).item(),
        ranked: None,
        total: g.value(total).item(),
    };
    Ok((total, terms))
}

/// Graph node for the ranked loss; returns the total and the term values.
#[allow(clippy::too_many_arguments)]
pub fn loss_ranked_graph(
    g: &mut Graph,
    y_hat: Var,
    scores: Var,
    gold: f64,
    gamma: f64,
    gamma_ranked: f64,
    k: f64,
) -> Result<(Var, LossTerms)> {
    let (l1, l2, l3) = weighted_terms(g, y_hat, scores, gold)?;
    let token = g.add(l2, l3)?;
    let token = g.scale(token, gamma)?;
    let base = g.add(l1, token)?;
    let ranked = ranked_term(g, scores, gold, k)?;
    let ranked_scaled = g.scale(ranked, gamma_ranked)?;
    let total = g.add(base, ranked_scaled)?;
    let terms = LossTerms {
        l1: g.value(l1).item(),
        l2: g.value(l2).item(),
        l3: g.value(l3).item(),
        ranked: Some(g.value(ranked).item()),
        total: g.value(total).item(),
    };
    Ok((total, terms))
}

fn constant_inputs(g: &mut Graph, y_hat: f64, scores: &[f64]) -> (Var, Var) {
    let y = g.constant(Tensor::scalar(y_hat));
    let s = g.constant(Tensor::vector(scores.to_vec()));
    (y, s)
}

/// `L1 + γ(L2 + L3)` for one document.
pub fn loss_weighted(y_hat: f64, scores: &[f64], gold: f64, gamma: f64) -> Result<LossTerms> {
    let mut g = Graph::new();
    let (y, s) = constant_inputs(&mut g, y_hat, scores);
    Ok(loss_weighted_graph(&mut g, y, s, gold, gamma)?.1)
}

/// `L1 + γ(L2 + L3) + γ_ranked·L_ranked` for one document.
pub fn loss_ranked(y_hat: f64, scores: &[f64], gold: f64, gamma: f64, gamma_ranked: f64, k: f64) -> Result<LossTerms> {
    let mut g = Graph::new();
    let (y, s) = constant_inputs(&mut g, y_hat, scores);
    Ok(loss_ranked_graph(&mut g, y, s, gold, gamma, gamma_ranked, k)?.1)
}

/// Fraction of a document's token scores that receive a supervision target.
///
/// Weighted supervision touches only the minimum and maximum score, i.e.
/// `2/N` for `N ≥ 2`; ranked supervision touches every token.
pub fn supervision_coverage(variant: LossVariant, n: usize, _k: f64) -> f64 {
    if n == 0 {
        return 0.0;
    }
    match variant {
        LossVariant::Weighted => n.min(2) as f64 / n as f64,
        LossVariant::Ranked => 1.0,
    }
}

/// Counts tokens whose score gets a nonzero gradient from the token-level
/// loss terms (`L2`, `L3` and, for the ranked variant, `L_ranked`) at unit
/// weights.
pub fn measured_supervised_tokens(variant: LossVariant, scores: &[f64], gold: f64, k: f64) -> Result<usize> {
    let mut g = Graph::new();
    let y = g.constant(Tensor::scalar(gold));
    let s = g.leaf(Tensor::vector(scores.to_vec()));
    let (total, _) = match variant {
        LossVariant::Weighted => loss_weighted_graph(&mut g, y, s, gold, 1.0)?,
        LossVariant::Ranked => loss_ranked_graph(&mut g, y, s, gold, 1.0, 1.0, k)?,
    };
    g.backward(total)?;
    Ok(g.grad(s).data().iter().filter(|v| **v != 0.0).count())
}
