//! Token and document evaluation metrics.

mod report;
mod ttest;

use std::cmp::Ordering;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::top_k_count;

pub use report::{format_table, EvalReport, TableRow};
pub use ttest::{paired_t_test, regularized_incomplete_beta, student_t_two_tailed};

fn check_len(op: &str, a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Invalid(format!("{op}: length mismatch {a} vs {b}")));
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// F-beta from precision and recall; 0 when both are 0.
pub fn f_beta(p: f64, r: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * p + r;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / den
    }
}

/// Confusion counts for binary sequences (nonzero = positive).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_pairs(pred: &[u8], gold: &[u8]) -> Result<Self> {
        check_len("confusion", pred.len(), gold.len())?;
        let mut c = Self::default();
        c.accumulate(pred, gold);
        Ok(c)
    }

    fn accumulate(&mut self, pred: &[u8], gold: &[u8]) {
        for (&p, &g) in pred.iter().zip(gold) {
            match (p != 0, g != 0) {
                (true, true) => self.tp += 1,
                (true, false) => self.fp += 1,
                (false, true) => self.fn_ += 1,
                (false, false) => self.tn += 1,
            }
        }
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f(&self, beta: f64) -> f64 {
        f_beta(self.precision(), self.recall(), beta)
    }
}

/// `(P, R, F_beta)` for one binary sequence.
pub fn token_prf(pred: &[u8], gold: &[u8], beta: f64) -> Result<(f64, f64, f64)> {
    let c = Confusion::from_pairs(pred, gold)?;
    Ok((c.precision(), c.recall(), c.f(beta)))
}

/// Pools confusion counts over documents before computing P/R/F.
pub fn pooled_confusion(preds: &[Vec<u8>], golds: &[Vec<u8>]) -> Result<Confusion> {
    check_len("pooled_confusion", preds.len(), golds.len())?;
    let mut c = Confusion::default();
    for (p, g) in preds.iter().zip(golds) {
        check_len("pooled_confusion", p.len(), g.len())?;
        c.accumulate(p, g);
    }
    Ok(c)
}

/// Binary F1 on the positive class with `y_hat > 0.5` as positive.
pub fn doc_f1(y_hat: &[f64], gold: &[u8]) -> Result<f64> {
    let pred: Vec<u8> = y_hat.iter().map(|&y| u8::from(y > crate::heads::THRESHOLD)).collect();
    Ok(token_prf(&pred, gold, 1.0)?.2)
}

/// Indices sorted by descending score, ties to the lower index.
pub fn rank_order(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// Average precision of one ranking; `None` when there is no positive.
pub fn average_precision(scores: &[f64], gold: &[u8]) -> Result<Option<f64>> {
    check_len("average_precision", scores.len(), gold.len())?;
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in rank_order(scores).iter().enumerate() {
        if gold[i] != 0 {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok((hits > 0).then(|| sum / hits as f64))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ApMode {
    /// Mean of per-document APs, skipping documents without positives.
    #[default]
    PerDocument,
    /// One AP over every token of every document. Score ties across
    /// documents go to the earlier document.
    Pooled,
}

pub fn mean_average_precision(scores: &[Vec<f64>], gold: &[Vec<u8>], mode: ApMode) -> Result<f64> {
    check_len("mean_average_precision", scores.len(), gold.len())?;
    let none = || Error::Invalid("MAP is undefined: no document has a positive token".into());
    match mode {
        ApMode::PerDocument => {
            let mut aps = Vec::new();
            for (s, g) in scores.iter().zip(gold) {
                if let Some(ap) = average_precision(s, g)? {
                    aps.push(ap);
                }
            }
            if aps.is_empty() {
                return Err(none());
            }
            Ok(aps.iter().sum::<f64>() / aps.len() as f64)
        }
        ApMode::Pooled => {
            for (s, g) in scores.iter().zip(gold) {
                check_len("mean_average_precision", s.len(), g.len())?;
            }
            let flat_s: Vec<f64> = scores.iter().flatten().copied().collect();
            let flat_g: Vec<u8> = gold.iter().flatten().copied().collect();
            average_precision(&flat_s, &flat_g)?.ok_or_else(none)
        }
    }
}

/// Marks the `⌈k·N/100⌉` highest scores with 1 (ties to the lower index).
pub fn topk_threshold(scores: &[f64], k: f64) -> Vec<u8> {
    let mut out = vec![0u8; scores.len()];
    if scores.is_empty() {
        return out;
    }
    for &i in rank_order(scores).iter().take(top_k_count(scores.len(), k)) {
        out[i] = 1;
    }
    out
}

/// I.i.d. uniform `[0, 1)` scores for documents of the given lengths.
pub fn random_baseline_scores(lengths: &[usize], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lengths
        .iter()
        .map(|&n| (0..n).map(|_| rng.gen::<f64>()).collect())
        .collect()
}

/// Fraction of tokens scoring strictly above `threshold`.
pub fn fraction_above(scores: &[Vec<f64>], threshold: f64) -> f64 {
    let total: usize = scores.iter().map(Vec::len).sum();
    let above = scores.iter().flatten().filter(|&&s| s > threshold).count();
    ratio(above, total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prf_examples() {
        let (p, r, f) = token_prf(&[1, 1, 0], &[1, 0, 1], 1.0).unwrap();
        assert_eq!((p, r, f), (0.5, 0.5, 0.5));
        assert!((f_beta(0.5, 0.25, 0.5) - 0.41667).abs() < 1e-5);
        assert_eq!(token_prf(&[0, 1, 1], &[0, 1, 1], 0.5).unwrap(), (1.0, 1.0, 1.0));
        assert_eq!(token_prf(&[0, 0], &[0, 0], 1.0).unwrap(), (0.0, 0.0, 0.0));
        assert!(token_prf(&[0], &[0, 1], 1.0).is_err());
    }

    #[test]
    fn ap_examples() {
        let ap = |s: &[f64], g: &[u8]| average_precision(s, g).unwrap().unwrap();
        assert_eq!(ap(&[0.3, 0.2, 0.1], &[1, 1, 1]), 1.0);
        assert!((ap(&[0.9, 0.8, 0.7], &[1, 0, 1]) - 0.8333).abs() < 1e-4);
        assert_eq!(ap(&[0.9, 0.1], &[0, 1]), 0.5);
        // ties go to the lower index
        assert_eq!(ap(&[0.5, 0.5], &[0, 1]), 0.5);
    }

    #[test]
    fn map_skips_and_errors() {
        let s = vec![vec![0.9, 0.1], vec![0.1, 0.2]];
        let g = vec![vec![0, 1], vec![0, 0]];
        assert_eq!(mean_average_precision(&s, &g, ApMode::PerDocument).unwrap(), 0.5);
        assert_eq!(mean_average_precision(&s, &g, ApMode::Pooled).unwrap(), 1.0 / 3.0);
        assert!(mean_average_precision(&s, &[vec![0, 0], vec![0, 0]], ApMode::PerDocument).is_err());
    }

    #[test]
    fn doc_f1_examples() {
        assert_eq!(doc_f1(&[0.9, 0.1], &[1, 0]).unwrap(), 1.0);
        assert!((doc_f1(&[0.9, 0.8], &[1, 0]).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(doc_f1(&[0.1, 0.2], &[1, 0]).unwrap(), 0.0);
        // 0.5 is not above the threshold
        assert_eq!(doc_f1(&[0.5], &[1]).unwrap(), 0.0);
    }

    #[test]
    fn topk_examples() {
        assert_eq!(topk_threshold(&[0.9, 0.5, 0.1, 0.3], 25.0), vec![1, 0, 0, 0]);
        assert_eq!(topk_threshold(&[0.2, 0.5, 0.1], 100.0), vec![1, 1, 1]);
        assert_eq!(topk_threshold(&[0.5, 0.5], 50.0), vec![1, 0]);
    }

    #[test]
    fn random_scores_are_seeded() {
        let a = random_baseline_scores(&[3, 5], 7);
        assert_eq!(a, random_baseline_scores(&[3, 5], 7));
        assert_ne!(a, random_baseline_scores(&[3, 5], 8));
        assert!(a.iter().flatten().all(|s| (0.0..1.0).contains(s)));
    }
}
