//! Mini-batch training, checkpoint selection and the repeat protocol.

mod optim;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::eval::{predict_dataset, EvalOptions};
use crate::metrics::EvalReport;
use crate::model::{Model, ModelVariant};
use crate::params::ParamStore;

pub use optim::{Optimizer, OptimizerKind, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub repeats: usize,
    pub variant: ModelVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            learning_rate: 1e-3,
            batch_size: 8,
            optimizer: OptimizerKind::AdaptiveMoment,
            seed: 0,
            repeats: 3,
            variant: ModelVariant::CompositionalRanked,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning_rate must be finite and >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// Mean per-document training loss.
    pub mean_loss: f64,
    /// Forward, backward and update time.
    pub seconds: f64,
}

/// Shuffle seed for an epoch, derived from the run seed.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(epoch as u64 + 1)
}

/// One pass over `train` in shuffled mini-batches. Each batch's gradient is
/// the mean of its per-document loss gradients.
pub fn train_epoch(
    model: &mut Model,
    opt: &mut Optimizer,
    train: &Dataset,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<EpochStats> {
    if train.is_empty() {
        return Err(Error::Invalid("training split is empty".into()));
    }
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch)));
    let mut total_loss = 0.0;
    let mut seconds = 0.0;
    for batch in order.chunks(cfg.batch_size) {
        let start = Instant::now();
        let mut g = Graph::new();
        let bound = model.params.bind(&mut g, true);
        let mut losses = Vec::with_capacity(batch.len());
        for &i in batch {
            let doc = &train.documents[i];
            let fwd = model.forward(&mut g, &bound, doc)?;
            let (loss, terms) = model.loss(&mut g, &fwd, doc.doc_label)?;
            if !terms.total.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    doc_id: doc.doc_id.clone(),
                    terms: terms.to_string(),
                });
            }
            total_loss += terms.total;
            losses.push(loss);
        }
        let mut sum = losses[0];
        for &l in &losses[1..] {
            sum = g.add(sum, l)?;
        }
        let mean = g.scale(sum, 1.0 / batch.len() as f64)?;
        g.backward(mean)?;
        let grads = bound.grads(&g);
        opt.step(&mut model.params, &grads);
        seconds += start.elapsed().as_secs_f64();
    }
    Ok(EpochStats {
        mean_loss: total_loss / train.len() as f64,
        seconds,
    })
}

/// Parameters after an epoch together with their dev evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 1-based epoch index.
    pub epoch: usize,
    pub params: ParamStore,
    pub dev_report: EvalReport,
    pub seconds: f64,
}

/// Highest dev document F1; ties go to the earliest epoch.
pub fn select_checkpoint(checkpoints: &[Checkpoint]) -> Option<&Checkpoint> {
    let mut best: Option<&Checkpoint> = None;
    for c in checkpoints {
        let score = c.dev_report.doc_f1.unwrap_or(0.0);
        if best.is_none_or(|b| score > b.dev_report.doc_f1.unwrap_or(0.0)) {
            best = Some(c);
        }
    }
    best
}

/// Outcome of one seeded training run.
#[derive(Debug, Clone)]
pub struct TrainRun {
    pub seed: u64,
    /// Model restored to the selected checkpoint.
    pub model: Model,
    pub best_epoch: usize,
    pub dev_report: EvalReport,
    pub epochs: Vec<EpochSummary>,
    /// Mean training seconds per epoch.
    pub seconds_per_epoch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub train_loss: f64,
    pub seconds: f64,
    pub dev_report: EvalReport,
}

/// Trains `model` for `cfg.epochs`, evaluating `dev` after every epoch, and
/// returns the model restored to the best checkpoint. `on_epoch` sees each
/// summary as it is produced.
pub fn train_run(
    mut model: Model,
    train: &Dataset,
    dev: &Dataset,
    cfg: &TrainConfig,
    eval: &EvalOptions,
    mut on_epoch: impl FnMut(&EpochSummary),
) -> Result<TrainRun> {
    cfg.validate()?;
    if dev.is_empty() {
        return Err(Error::Invalid("dev split is empty".into()));
    }
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    let mut summaries = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let stats = train_epoch(&mut model, &mut opt, train, cfg, epoch)?;
        let (_, mut dev_report) = predict_dataset(&model, dev, eval)?;
        dev_report.seconds_per_epoch = Some(stats.seconds);
        let summary = EpochSummary {
            epoch,
            train_loss: stats.mean_loss,
            seconds: stats.seconds,
            dev_report,
        };
        on_epoch(&summary);
        summaries.push(summary);
        checkpoints.push(Checkpoint {
            epoch,
            params: model.params.clone(),
            dev_report,
            seconds: stats.seconds,
        });
    }
    let best = select_checkpoint(&checkpoints).expect("at least one epoch").clone();
    let seconds_per_epoch = summaries.iter().map(|s| s.seconds).sum::<f64>() / summaries.len() as f64;
    model.params = best.params;
    Ok(TrainRun {
        seed: cfg.seed,
        model,
        best_epoch: best.epoch,
        dev_report: best.dev_report,
        epochs: summaries,
        seconds_per_epoch,
    })
}
