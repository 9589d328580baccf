use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Evaluation summary. Metric fields lie in `[0, 1]`; token metrics are
/// `None` when the dataset carries no token labels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for baselines that make no document prediction.
    pub doc_f1: Option<f64>,
    pub token_p: Option<f64>,
    pub token_r: Option<f64>,
    pub token_f1: Option<f64>,
    pub token_f05: Option<f64>,
    pub map: Option<f64>,
    /// Mean share of token scores that receive a training signal.
    pub coverage: Option<f64>,
    pub seconds_per_epoch: Option<f64>,
    /// Share of tokens in gold-positive documents with a score above 0.9.
    pub high_score_fraction: Option<f64>,
}

impl EvalReport {
    pub fn validate(&self) -> Result<()> {
        let metrics = [
            self.doc_f1,
            self.token_p,
            self.token_r,
            self.token_f1,
            self.token_f05,
            self.map,
            self.coverage,
            self.high_score_fraction,
        ];
        if metrics.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Invalid(format!("metric outside [0, 1]: {self:?}")));
        }
        if self.seconds_per_epoch.is_some_and(|s| !(s >= 0.0)) {
            return Err(Error::Invalid("seconds_per_epoch must be >= 0".into()));
        }
        Ok(())
    }

    /// Copy with the timing field cleared, for reproducibility comparisons.
    pub fn without_timing(&self) -> Self {
        Self {
            seconds_per_epoch: None,
            ..*self
        }
    }
}

/// One table line: a model name, mean metrics over repeats and the sample
/// standard deviation of token F1 (0 for a single repeat).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub model: String,
    pub mean: EvalReport,
    pub f1_sd: Option<f64>,
    pub repeats: usize,
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    let v = v?;
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn sample_sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

impl TableRow {
    pub fn aggregate(model: impl Into<String>, reports: &[EvalReport]) -> Result<Self> {
        if reports.is_empty() {
            return Err(Error::Invalid("cannot aggregate zero reports".into()));
        }
        let m = |f: fn(&EvalReport) -> Option<f64>| mean_opt(reports.iter().map(f));
        let mean = EvalReport {
            doc_f1: m(|r| r.doc_f1),
            token_p: m(|r| r.token_p),
            token_r: m(|r| r.token_r),
            token_f1: m(|r| r.token_f1),
            token_f05: m(|r| r.token_f05),
            map: m(|r| r.map),
            coverage: m(|r| r.coverage),
            seconds_per_epoch: m(|r| r.seconds_per_epoch),
            high_score_fraction: m(|r| r.high_score_fraction),
        };
        let f1s: Option<Vec<f64>> = reports.iter().map(|r| r.token_f1).collect();
        Ok(Self {
            model: model.into(),
            mean,
            f1_sd: f1s.map(|v| sample_sd(&v)),
            repeats: reports.len(),
        })
    }
}

/// Aligned plain-text table: Model | Doc F1 | F1 | F0.5 | P | R | MAP |
/// Coverage | Time. Metrics are shown as percentages, time in seconds.
pub fn format_table(rows: &[TableRow]) -> String {
    let pct = |v: Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
    let header = ["Model", "Doc F1", "F1", "F0.5", "P", "R", "MAP", "Coverage", "Time"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        let f1 = match (r.mean.token_f1, r.f1_sd) {
            (Some(f), Some(sd)) => format!("{:.2} ± {:.2}", 100.0 * f, 100.0 * sd),
            (f, _) => pct(f),
        };
        cells.push(vec![
            r.model.clone(),
            pct(r.mean.doc_f1),
            f1,
            pct(r.mean.token_f05),
            pct(r.mean.token_p),
            pct(r.mean.token_r),
            pct(r.mean.map),
            pct(r.mean.coverage),
            r.mean.seconds_per_epoch.map_or("-".into(), |s| format!("{s:.2}")),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in cells.iter().enumerate() {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, s)| {
                let pad = widths[c] - s.chars().count();
                if c == 0 {
                    format!("{s}{}", " ".repeat(pad))
                } else {
                    format!("{}{s}", " ".repeat(pad))
                }
            })
            .collect();
        out.push_str(line.join(" | ").trim_end());
        out.push('\n');
        if i == 0 {
            let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            out.push_str(&rule.join("-+-"));
            out.push('\n');
        }
    }
    out
}
