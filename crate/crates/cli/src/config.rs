use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rationale_core::encoder::{EncoderConfig, HeadReduction};
use rationale_core::heads::HeadConfig;
use rationale_core::metrics::ApMode;
use rationale_core::model::{ModelConfig, ModelVariant};
use rationale_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

/// Flat run configuration: training, encoder and head fields side by side
/// with dataset paths. Relative paths resolve against the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub train_path: Option<PathBuf>,
    pub dev_path: Option<PathBuf>,
    pub test_path: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    /// Largest number of regular vocabulary entries taken from train.
    pub vocab_size: usize,
    pub ap_mode: ApMode,
    pub head_reduction: HeadReduction,
    /// Variants timed by `bench`.
    pub variants: Vec<ModelVariant>,
    pub bench_epochs: usize,
    #[serde(flatten)]
    pub train: TrainConfig,
    #[serde(flatten)]
    pub encoder: EncoderConfig,
    #[serde(flatten)]
    pub head: HeadConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            train_path: None,
            dev_path: None,
            test_path: None,
            out_dir: None,
            vocab_size: 5000,
            ap_mode: ApMode::PerDocument,
            head_reduction: HeadReduction::Mean,
            variants: Vec::new(),
            bench_epochs: 2,
            train: TrainConfig::default(),
            encoder: EncoderConfig::default(),
            head: HeadConfig::default(),
        }
    }
}

fn known_keys() -> BTreeSet<String> {
    let v = serde_json::to_value(RunConfig::default()).expect("config serialises");
    v.as_object().expect("object").keys().cloned().collect()
}

impl RunConfig {
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let value: Value = serde_json::from_str(text).context("config is not valid JSON")?;
        let Some(obj) = value.as_object() else {
            bail!("config must be a JSON object");
        };
        let known = known_keys();
        let unknown: Vec<&String> = obj.keys().filter(|k| !known.contains(*k)).collect();
        if !unknown.is_empty() {
            bail!("unknown config keys: {unknown:?}");
        }
        let mut cfg: RunConfig = serde_json::from_value(value).context("invalid config value")?;
        for p in [
            &mut cfg.train_path,
            &mut cfg.dev_path,
            &mut cfg.test_path,
            &mut cfg.out_dir,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base_dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base).with_context(|| format!("in config {}", path.display()))
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            variant: self.train.variant,
            encoder: self.encoder.clone(),
            head: self.head.clone(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.model_config().validate()?;
        if self.vocab_size == 0 {
            bail!("vocab_size must be positive");
        }
        Ok(())
    }
}

/// Flag overrides shared by the model-building commands.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct Overrides {
    /// Base seed (repeat r uses seed + r)
    #[arg(long)]
    pub seed: Option<u64>,
    /// Supervised top percentage
    #[arg(long)]
    pub k: Option<f64>,
    /// Attention sharpness
    #[arg(long)]
    pub beta: Option<f64>,
    /// Weight of the min/max token terms
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Weight of the ranking term
    #[arg(long = "gamma-ranked")]
    pub gamma_ranked: Option<f64>,
    /// Model variant
    #[arg(long)]
    pub variant: Option<ModelVariant>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(k) = self.k {
            cfg.head.k = k;
        }
        if let Some(b) = self.beta {
            cfg.head.beta = b;
        }
        if let Some(g) = self.gamma {
            cfg.head.gamma = g;
        }
        if let Some(g) = self.gamma_ranked {
            cfg.head.gamma_ranked = g;
        }
        if let Some(v) = self.variant {
            cfg.train.variant = v;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_keys_and_relative_paths() {
        let cfg = RunConfig::from_json(
            r#"{"train_path":"d/train.jsonl","hidden":8,"n_heads":2,"k":10,"epochs":3,"variant":"weighted-monolithic"}"#,
            Path::new("/base"),
        )
        .unwrap();
        assert_eq!(cfg.train_path.unwrap(), Path::new("/base/d/train.jsonl"));
        assert_eq!(cfg.encoder.hidden, 8);
        assert_eq!(cfg.head.k, 10.0);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.variant, ModelVariant::WeightedMonolithic);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::from_json(r#"{"hiddn":8}"#, Path::new(".")).unwrap_err();
        assert!(format!("{err:#}").contains("hiddn"));
    }

    #[test]
    fn overrides_win() {
        let mut cfg = RunConfig::default();
        Overrides {
            k: Some(20.0),
            seed: Some(4),
            ..Default::default()
        }
        .apply(&mut cfg);
        assert_eq!((cfg.head.k, cfg.train.seed), (20.0, 4));
    }
}
