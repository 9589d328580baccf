//! Dataset-level inference, baselines and evaluation reports.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::encoder::HeadReduction;
use crate::error::{Error, Result};
use crate::heads::{measured_supervised_tokens, LossVariant};
use crate::metrics::{self, ApMode, EvalReport};
use crate::model::Model;

/// Score above which a token counts toward `high_score_fraction`.
pub const HIGH_SCORE: f64 = 0.9;

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DocPrediction {
    pub doc_id: String,
    /// `None` for baselines without a document classifier.
    pub y_hat: Option<f64>,
    pub token_scores: Vec<f64>,
    pub binary_rationale: Vec<u8>,
}

/// Which scores to evaluate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    /// Uniform random token scores.
    Random,
    /// Final-layer CLS attention of a windowed-encoder model.
    TopkAttn,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalOptions {
    /// Top-k percentage used for baseline thresholding and ranked coverage.
    pub k: f64,
    pub ap_mode: ApMode,
    pub head_reduction: HeadReduction,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            k: 8.0,
            ap_mode: ApMode::PerDocument,
            head_reduction: HeadReduction::Mean,
            seed: 0,
        }
    }
}

/// Frozen-parameter predictions for every document plus the report.
/// Tokens are classified at `ã > 0.5`.
pub fn predict_dataset(model: &Model, ds: &Dataset, opts: &EvalOptions) -> Result<(Vec<DocPrediction>, EvalReport)> {
    let mut preds = Vec::with_capacity(ds.len());
    for doc in &ds.documents {
        let p = model.predict(doc)?;
        preds.push(DocPrediction {
            doc_id: doc.doc_id.clone(),
            y_hat: Some(p.y_hat),
            token_scores: p.token_scores,
            binary_rationale: p.binary_rationale,
        });
    }
    let coverage = Some((model.variant().loss(), model.config.head.k));
    let report = report_from_predictions(&preds, ds, coverage, opts.ap_mode)?;
    Ok((preds, report))
}

/// Baseline scores thresholded at the top `k`%.
pub fn baseline_predictions(
    baseline: Baseline,
    model: Option<&Model>,
    ds: &Dataset,
    opts: &EvalOptions,
) -> Result<(Vec<DocPrediction>, EvalReport)> {
    let scores: Vec<Vec<f64>> = match baseline {
        Baseline::Random => {
            let lengths: Vec<usize> = ds.documents.iter().map(|d| d.n_tokens()).collect();
            metrics::random_baseline_scores(&lengths, opts.seed)
        }
        Baseline::TopkAttn => {
            let model = model.ok_or_else(|| Error::Config("the topk-attn baseline needs a model".into()))?;
            ds.documents
                .iter()
                .map(|d| model.cls_attention_scores(d, opts.head_reduction))
                .collect::<Result<_>>()?
        }
    };
    let y_hats: Vec<Option<f64>> = match (baseline, model) {
        (Baseline::TopkAttn, Some(m)) => ds
            .documents
            .iter()
            .map(|d| m.predict(d).map(|p| Some(p.y_hat)))
            .collect::<Result<_>>()?,
        _ => vec![None; ds.len()],
    };
    let preds: Vec<DocPrediction> = ds
        .documents
        .iter()
        .zip(scores)
        .zip(y_hats)
        .map(|((d, s), y)| DocPrediction {
            doc_id: d.doc_id.clone(),
            y_hat: y,
            binary_rationale: metrics::topk_threshold(&s, opts.k),
            token_scores: s,
        })
        .collect();
    let report = report_from_predictions(&preds, ds, None, opts.ap_mode)?;
    Ok((preds, report))
}

/// Recomputes every report field from stored predictions. `coverage`
/// names the loss whose supervised-token share is measured.
pub fn report_from_predictions(
    preds: &[DocPrediction],
    ds: &Dataset,
    coverage: Option<(LossVariant, f64)>,
    ap_mode: ApMode,
) -> Result<EvalReport> {
    check_alignment(preds, ds)?;
    let doc_f1 = if preds.iter().all(|p| p.y_hat.is_some()) && !preds.is_empty() {
        let y: Vec<f64> = preds.iter().map(|p| p.y_hat.unwrap_or(0.0)).collect();
        let gold: Vec<u8> = ds.documents.iter().map(|d| d.doc_label).collect();
        Some(metrics::doc_f1(&y, &gold)?)
    } else {
        None
    };
    let mut report = EvalReport {
        doc_f1,
        token_p: None,
        token_r: None,
        token_f1: None,
        token_f05: None,
        map: None,
        coverage: None,
        seconds_per_epoch: None,
        high_score_fraction: None,
    };
    if let Some((variant, k)) = coverage {
        let mut total = 0.0;
        for (p, d) in preds.iter().zip(&ds.documents) {
            let n = p.token_scores.len();
            let hit = measured_supervised_tokens(variant, &p.token_scores, f64::from(d.doc_label), k)?;
            total += hit as f64 / n as f64;
        }
        report.coverage = Some(total / preds.len().max(1) as f64);
    }
    let positive_scores: Vec<Vec<f64>> = preds
        .iter()
        .zip(&ds.documents)
        .filter(|(_, d)| d.doc_label == 1)
        .map(|(p, _)| p.token_scores.clone())
        .collect();
    if !positive_scores.is_empty() {
        report.high_score_fraction = Some(metrics::fraction_above(&positive_scores, HIGH_SCORE));
    }
    if ds.has_token_labels() {
        let gold: Vec<Vec<u8>> = ds
            .documents
            .iter()
            .map(|d| d.flat_token_labels().unwrap_or_default())
            .collect();
        let pred: Vec<Vec<u8>> = preds.iter().map(|p| p.binary_rationale.clone()).collect();
        let c = metrics::pooled_confusion(&pred, &gold)?;
        report.token_p = Some(c.precision());
        report.token_r = Some(c.recall());
        report.token_f1 = Some(c.f(1.0));
        report.token_f05 = Some(c.f(0.5));
        let scores: Vec<Vec<f64>> = preds.iter().map(|p| p.token_scores.clone()).collect();
        report.map = metrics::mean_average_precision(&scores, &gold, ap_mode).ok();
    }
    report.validate()?;
    Ok(report)
}

fn check_alignment(preds: &[DocPrediction], ds: &Dataset) -> Result<()> {
    if preds.len() != ds.len() {
        return Err(Error::Invalid(format!(
            "{} predictions for {} documents",
            preds.len(),
            ds.len()
        )));
    }
    for (p, d) in preds.iter().zip(&ds.documents) {
        if p.doc_id != d.doc_id {
            return Err(Error::Invalid(format!(
                "prediction order mismatch: {} vs {}",
                p.doc_id, d.doc_id
            )));
        }
        let n = d.n_tokens();
        if p.token_scores.len() != n || p.binary_rationale.len() != n {
            return Err(Error::Validation {
                doc_id: d.doc_id.clone(),
                message: format!("prediction has {} scores for {n} tokens", p.token_scores.len()),
            });
        }
    }
    Ok(())
}

/// Reorders `preds` to follow `ds`. Errors list the doc_ids without a
/// prediction.
pub fn align_predictions(mut preds: Vec<DocPrediction>, ds: &Dataset) -> Result<Vec<DocPrediction>> {
    let mut by_id: std::collections::HashMap<String, DocPrediction> =
        preds.drain(..).map(|p| (p.doc_id.clone(), p)).collect();
    let missing: Vec<&str> = ds
        .documents
        .iter()
        .filter(|d| !by_id.contains_key(&d.doc_id))
        .map(|d| d.doc_id.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Invalid(format!(
            "no predictions for doc_ids: {}",
            missing.join(", ")
        )));
    }
    let out: Vec<DocPrediction> = ds
        .documents
        .iter()
        .map(|d| by_id.remove(&d.doc_id).expect("checked above"))
        .collect();
    check_alignment(&out, ds)?;
    Ok(out)
}

pub fn predictions_to_jsonl(preds: &[DocPrediction]) -> Result<String> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    Ok(out)
}

pub fn write_predictions(path: impl AsRef<Path>, preds: &[DocPrediction]) -> Result<()> {
    fs::write(path, predictions_to_jsonl(preds)?)?;
    Ok(())
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<DocPrediction>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}
