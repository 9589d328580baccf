mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rationale_core::eval::Baseline;

use crate::config::Overrides;

/// Unsupervised token-level rationale extraction experiments.
#[derive(Debug, Parser)]
#[command(name = "rationale", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted rationales
    Synth {
        /// Synthetic spec (flat JSON, optional "preset" key)
        #[arg(long)]
        config: PathBuf,
        /// Output directory for train/dev/test JSONL files
        #[arg(long)]
        out: PathBuf,
        /// Override the spec seed
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model for the configured number of repeats
    Train {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory (defaults to the config's out_dir)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint or a baseline on a dataset
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluate a baseline instead of the checkpoint's own scores
        #[arg(long, value_enum)]
        baseline: Option<BaselineArg>,
        /// Top-k percentage for baseline thresholding
        #[arg(long)]
        k: Option<f64>,
        /// Seed for the random baseline
        #[arg(long)]
        seed: Option<u64>,
        /// Report only document-level metrics
        #[arg(long)]
        doc_only: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render predictions as a highlighted HTML page
    Report {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Output HTML file
        #[arg(long)]
        out: PathBuf,
    },
    /// Time training epochs for several variants
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum BaselineArg {
    Random,
    TopkAttn,
}

impl From<BaselineArg> for Baseline {
    fn from(b: BaselineArg) -> Self {
        match b {
            BaselineArg::Random => Baseline::Random,
            BaselineArg::TopkAttn => Baseline::TopkAttn,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth { config, out, seed } => commands::synth(&config, &out, seed),
        Command::Train { config, overrides, out } => commands::train(&config, &overrides, out.as_deref()),
        Command::Eval {
            checkpoint,
            dataset,
            baseline,
            k,
            seed,
            doc_only,
            out,
        } => commands::eval(commands::EvalArgs {
            checkpoint: checkpoint.as_deref(),
            dataset: &dataset,
            baseline: baseline.map(Baseline::from),
            k,
            seed,
            doc_only,
            out: &out,
        }),
        Command::Report {
            predictions,
            dataset,
            out,
        } => commands::report(&predictions, &dataset, &out),
        Command::Bench { config, overrides, out } => commands::bench(&config, &overrides, out.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.downcast_ref::<commands::UserError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}
