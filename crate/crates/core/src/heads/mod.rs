//! Soft attention rationale heads.
//!
//! Token scores `ã_i = σ(w_score · tanh(W_e t_i + b_e) + b_score)`, attention
//! weights `a_i = ã_i^β / Σ_j ã_j^β`, the pooled representation
//! `c = Σ_i a_i t_i` and the document prediction
//! `ŷ = σ(W_y tanh(W_d c + b_d) + b_y)`.
//!
//! Weight matrices are stored input-major (`[in × out]`) so rows of the
//! embedding matrix multiply them directly.

mod loss;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::params::{glorot, Bound, ParamStore};

pub use loss::{
    loss_ranked, loss_ranked_graph, loss_weighted, loss_weighted_graph, measured_supervised_tokens, ranked_partition,
    supervision_coverage, top_k_count, LossTerms,
};

/// Token classification threshold on `ã_i` (strict `>`).
pub const THRESHOLD: f64 = 0.5;

/// Added to `Σ ã_j^β` during training so the weights stay defined.
pub const POOL_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossVariant {
    /// Document loss plus min/max token supervision.
    Weighted,
    /// Weighted loss plus the top-k% / rest ranking term.
    Ranked,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    /// Width of the scoring layer `e_i`.
    pub score_hidden: usize,
    /// Width of the document layer `d`.
    pub doc_hidden: usize,
    /// Attention sharpness.
    pub beta: f64,
    pub gamma: f64,
    pub gamma_ranked: f64,
    /// Percentage of tokens supervised towards the document label.
    pub k: f64,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            score_hidden: 32,
            doc_hidden: 32,
            beta: 1.0,
            gamma: 1.0,
            gamma_ranked: 1.0,
            k: 8.0,
        }
    }
}

impl HeadConfig {
    pub fn validate(&self) -> Result<()> {
        if self.score_hidden == 0 || self.doc_hidden == 0 {
            return Err(Error::Config("head widths must be positive".into()));
        }
        if !(self.beta > 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be > 0, got {}", self.beta)));
        }
        if !(self.gamma >= 0.0) || !(self.gamma_ranked >= 0.0) {
            return Err(Error::Config("gamma and gamma_ranked must be >= 0".into()));
        }
        if !(self.k > 0.0 && self.k <= 100.0) {
            return Err(Error::Config(format!("k must lie in (0, 100], got {}", self.k)));
        }
        Ok(())
    }
}

pub const W_E: &str = "head.w_e";
pub const B_E: &str = "head.b_e";
pub const W_SCORE: &str = "head.w_score";
pub const B_SCORE: &str = "head.b_score";
pub const W_D: &str = "head.w_d";
pub const B_D: &str = "head.b_d";
pub const W_Y: &str = "head.w_y";
pub const B_Y: &str = "head.b_y";

/// Glorot-initialised head for `hidden`-wide embeddings.
pub fn init_params(cfg: &HeadConfig, hidden: usize, rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(W_E, glorot(rng, hidden, cfg.score_hidden));
    p.insert(B_E, Tensor::zeros(&[cfg.score_hidden]));
    p.insert(W_SCORE, glorot(rng, cfg.score_hidden, 1));
    p.insert(B_SCORE, Tensor::zeros(&[1]));
    p.insert(W_D, glorot(rng, hidden, cfg.doc_hidden));
    p.insert(B_D, Tensor::zeros(&[cfg.doc_hidden]));
    p.insert(W_Y, glorot(rng, cfg.doc_hidden, 1));
    p.insert(B_Y, Tensor::zeros(&[1]));
    p
}

/// An all-zero head: every token scores exactly 0.5 and `ŷ = 0.5`.
pub fn zero_params(cfg: &HeadConfig, hidden: usize) -> ParamStore {
    let mut p = ParamStore::new();
    p.insert(W_E, Tensor::zeros(&[hidden, cfg.score_hidden]));
    p.insert(B_E, Tensor::zeros(&[cfg.score_hidden]));
    p.insert(W_SCORE, Tensor::zeros(&[cfg.score_hidden, 1]));
    p.insert(B_SCORE, Tensor::zeros(&[1]));
    p.insert(W_D, Tensor::zeros(&[hidden, cfg.doc_hidden]));
    p.insert(B_D, Tensor::zeros(&[cfg.doc_hidden]));
    p.insert(W_Y, Tensor::zeros(&[cfg.doc_hidden, 1]));
    p.insert(B_Y, Tensor::zeros(&[1]));
    p
}

/// Token scores `ã` (shape `[N]`) and pre-activation logits `ẽ`.
pub fn token_scores(g: &mut Graph, t: Var, params: &Bound) -> Result<(Var, Var)> {
    let (n, _) = g.value(t).dims2()?;
    if n == 0 {
        return Err(Error::Invalid("token_scores needs at least one token".into()));
    }
    let e = g.matmul(t, params.var(W_E)?)?;
    let e = g.add_row_bias(e, params.var(B_E)?)?;
    let e = g.tanh(e)?;
    let logits = g.matmul(e, params.var(W_SCORE)?)?;
    let logits = g.add_row_bias(logits, params.var(B_SCORE)?)?;
    let logits = g.reshape(logits, &[n])?;
    let scores = g.sigmoid(logits)?;
    Ok((scores, logits))
}

/// Normalised weights `a` and pooled representation `c`.
///
/// Errors when every score is exactly zero; use [`attention_pool_guarded`]
/// inside training loops.
pub fn attention_pool(g: &mut Graph, t: Var, scores: Var, beta: f64) -> Result<(Var, Var)> {
    if g.value(scores).data().iter().all(|v| *v == 0.0) {
        return Err(Error::DegenerateAttention);
    }
    pool(g, t, scores, beta, 0.0)
}

/// [`attention_pool`] with [`POOL_EPSILON`] added to the normaliser.
pub fn attention_pool_guarded(g: &mut Graph, t: Var, scores: Var, beta: f64) -> Result<(Var, Var)> {
    pool(g, t, scores, beta, POOL_EPSILON)
}

fn pool(g: &mut Graph, t: Var, scores: Var, beta: f64, eps: f64) -> Result<(Var, Var)> {
    let (n, h) = g.value(t).dims2()?;
    if g.shape(scores) != [n] {
        return Err(Error::Shape {
            op: "attention_pool",
            left: vec![n, h],
            right: g.shape(scores).to_vec(),
        });
    }
    let powered = if beta == 1.0 { scores } else { g.power(scores, beta)? };
    let z = g.sum(powered)?;
    let z = if eps > 0.0 { g.add_const(z, eps)? } else { z };
    let weights = g.div_scalar(powered, z)?;
    let row = g.reshape(weights, &[1, n])?;
    let c = g.matmul(row, t)?;
    let c = g.reshape(c, &[h])?;
    Ok((weights, c))
}

/// Document probability `ŷ` from the pooled representation.
pub fn document_predict(g: &mut Graph, c: Var, params: &Bound) -> Result<Var> {
    let h = g.value(c).len();
    let c = g.reshape(c, &[1, h])?;
    let d = g.matmul(c, params.var(W_D)?)?;
    let d = g.add_row_bias(d, params.var(B_D)?)?;
    let d = g.tanh(d)?;
    let y = g.matmul(d, params.var(W_Y)?)?;
    let y = g.add_row_bias(y, params.var(B_Y)?)?;
    let y = g.sigmoid(y)?;
    g.reshape(y, &[])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn tiny_head(w_e: f64, w_score: f64) -> ParamStore {
        let cfg = HeadConfig {
            score_hidden: 1,
            doc_hidden: 1,
            ..HeadConfig::default()
        };
        let mut p = zero_params(&cfg, 1);
        p.insert(W_E, Tensor::matrix(&[vec![w_e]]));
        p.insert(W_SCORE, Tensor::matrix(&[vec![w_score]]));
        p
    }

    #[test]
    fn zero_head_scores_one_half() {
        let cfg = HeadConfig::default();
        let p = zero_params(&cfg, 4);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let t = g.constant(Tensor::new(vec![3, 4], (0..12).map(|i| i as f64 - 5.0).collect()).unwrap());
        let (s, _) = token_scores(&mut g, t, &b).unwrap();
        assert!(g.value(s).data().iter().all(|v| *v == 0.5));
        let (_, c) = attention_pool(&mut g, t, s, 1.0).unwrap();
        let y = document_predict(&mut g, c, &b).unwrap();
        assert_eq!(g.value(y).item(), 0.5);
    }

    #[test]
    fn scalar_scoring_examples() {
        let p = tiny_head(1.0, 1.0);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let t = g.constant(Tensor::matrix(&[vec![0.0], vec![10.0]]));
        let (s, _) = token_scores(&mut g, t, &b).unwrap();
        let s = g.value(s).data().to_vec();
        assert_eq!(s[0], 0.5);
        assert!((s[1] - 0.7311).abs() < 1e-3);
    }

    #[test]
    fn empty_document_rejected() {
        let p = zero_params(&HeadConfig::default(), 2);
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let t = g.constant(Tensor::zeros(&[0, 2]));
        assert!(token_scores(&mut g, t, &b).is_err());
    }

    #[test]
    fn pooling_examples() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 1.0]]));
        let half = g.constant(Tensor::vector(vec![0.5, 0.5]));
        for beta in [0.5, 1.0, 3.0] {
            let (a, c) = attention_pool(&mut g, t, half, beta).unwrap();
            assert_eq!(g.value(a).data(), &[0.5, 0.5]);
            assert_eq!(g.value(c).data(), &[0.5, 0.5]);
        }
        let onehot = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let (a, c) = attention_pool(&mut g, t, onehot, 1.0).unwrap();
        assert_eq!(g.value(a).data(), &[1.0, 0.0]);
        assert_eq!(g.value(c).data(), &[1.0, 0.0]);

        let s = g.constant(Tensor::vector(vec![0.5, 1.0]));
        let (a, _) = attention_pool(&mut g, t, s, 2.0).unwrap();
        let a = g.value(a).data();
        assert!((a[0] - 0.2).abs() < 1e-15 && (a[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn all_zero_scores_are_degenerate() {
        let mut g = Graph::new();
        let t = g.constant(Tensor::matrix(&[vec![1.0], vec![2.0]]));
        let z = g.constant(Tensor::vector(vec![0.0, 0.0]));
        assert!(matches!(
            attention_pool(&mut g, t, z, 1.0),
            Err(Error::DegenerateAttention)
        ));
        let (a, _) = attention_pool_guarded(&mut g, t, z, 1.0).unwrap();
        assert!(g.value(a).all_finite());
    }

    #[test]
    fn document_prediction_saturates_at_sigmoid_one() {
        let cfg = HeadConfig {
            score_hidden: 1,
            doc_hidden: 1,
            ..HeadConfig::default()
        };
        let mut p = zero_params(&cfg, 1);
        p.insert(W_D, Tensor::matrix(&[vec![1.0]]));
        p.insert(W_Y, Tensor::matrix(&[vec![1.0]]));
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let c = g.constant(Tensor::vector(vec![50.0]));
        let y = document_predict(&mut g, c, &b).unwrap();
        assert!((g.value(y).item() - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn random_head_prediction_inside_unit_interval() {
        let cfg = HeadConfig::default();
        let p = init_params(&cfg, 6, &mut ChaCha8Rng::seed_from_u64(3));
        let mut g = Graph::new();
        let b = p.bind(&mut g, false);
        let c = g.constant(Tensor::vector(vec![300.0, -2.0, 1e3, 0.0, 5.0, -1e4]));
        let y = document_predict(&mut g, c, &b).unwrap();
        let y = g.value(y).item();
        assert!(y > 0.0 && y < 1.0);
    }

    #[test]
    fn config_bounds() {
        assert!(HeadConfig::default().validate().is_ok());
        for bad in [
            HeadConfig {
                beta: 0.0,
                ..HeadConfig::default()
            },
            HeadConfig {
                k: 0.0,
                ..HeadConfig::default()
            },
            HeadConfig {
                k: 100.5,
                ..HeadConfig::default()
            },
            HeadConfig {
                gamma: -1.0,
                ..HeadConfig::default()
            },
        ] {
            assert!(bad.validate().is_err());
        }
    }
}
