use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context, Result};
use rationale_core::checkpoint::{load_model, save_checkpoint};
use rationale_core::data::{build_vocab, load_jsonl, split_dataset, synth_generate, write_jsonl, Dataset, SynthSpec};
use rationale_core::eval::{
    align_predictions, baseline_predictions, predict_dataset, predictions_to_jsonl, read_predictions, Baseline,
    EvalOptions,
};
use rationale_core::html::render_report;
use rationale_core::metrics::{format_table, EvalReport, TableRow};
use rationale_core::model::{Model, ModelVariant};
use rationale_core::training::{train_epoch, train_run, EpochSummary, Optimizer};
use serde::Serialize;
use serde_json::json;

use crate::config::{Overrides, RunConfig};
use crate::manifest::{now, write_atomic, RunManifest};

/// Invalid input from the caller; maps to exit code 2.
#[derive(Debug)]
pub struct UserError(String);

impl fmt::Display for UserError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UserError {}

fn user(e: impl Into<anyhow::Error>) -> anyhow::Error {
    anyhow!(UserError(format!("{:#}", e.into())))
}

fn user_msg(msg: impl Into<String>) -> anyhow::Error {
    anyhow!(UserError(msg.into()))
}

trait UserContext<T> {
    fn user_err(self) -> Result<T>;
}

impl<T, E: Into<anyhow::Error>> UserContext<T> for std::result::Result<T, E> {
    fn user_err(self) -> Result<T> {
        self.map_err(user)
    }
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    load_jsonl(path)
        .with_context(|| format!("loading dataset {}", path.display()))
        .user_err()
}

fn required<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a PathBuf> {
    p.as_ref().ok_or_else(|| user_msg(format!("config is missing {key}")))
}

fn check_sentence_lengths(ds: &Dataset, variant: ModelVariant, max: usize) -> Result<()> {
    if !variant.is_compositional() {
        return Ok(());
    }
    for d in &ds.documents {
        if let Some(s) = d.sentences.iter().find(|s| s.len() > max) {
            return Err(user_msg(format!(
                "document {}: sentence of {} tokens exceeds max_sentence_len {max}; re-segment the dataset",
                d.doc_id,
                s.len()
            )));
        }
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    write_atomic(path, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
}

pub fn synth(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let started = now();
    let text = fs::read_to_string(config)
        .with_context(|| format!("cannot read spec {}", config.display()))
        .user_err()?;
    let mut spec = SynthSpec::from_json(&text).user_err()?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let ds = synth_generate(&spec).user_err()?;
    let (train, dev, test) = split_dataset(&ds, spec.split_fractions(), spec.seed).user_err()?;

    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::new("synth", serde_json::to_value(&spec)?, Some(spec.seed), started);
    manifest.input("spec", config);
    for part in [&train, &dev, &test] {
        let split = part.split.expect("split_dataset tags splits").name();
        let path = out.join(format!("{split}.jsonl"));
        write_jsonl(&path, part)?;
        manifest.output(split, &path);
        eprintln!("wrote {} documents to {}", part.len(), path.display());
    }
    manifest.finish(&out.join("manifest.json"))
}

#[derive(Serialize)]
struct RepeatRecord {
    seed: u64,
    best_epoch: usize,
    dev_report: EvalReport,
    test_report: Option<EvalReport>,
    checkpoint: PathBuf,
    epochs: Vec<EpochSummary>,
}

pub fn train(config: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<()> {
    let started = now();
    let mut cfg = RunConfig::load(config).user_err()?;
    overrides.apply(&mut cfg);
    cfg.validate().user_err()?;
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| user_msg("no output directory: pass --out or set out_dir"))?;
    let train_ds = load_dataset(required(&cfg.train_path, "train_path")?)?;
    let dev_ds = load_dataset(required(&cfg.dev_path, "dev_path")?)?;
    let test_ds = cfg.test_path.as_deref().map(load_dataset).transpose()?;
    for ds in [Some(&train_ds), Some(&dev_ds), test_ds.as_ref()].into_iter().flatten() {
        check_sentence_lengths(ds, cfg.train.variant, cfg.encoder.max_sentence_len)?;
    }
    if train_ds.is_empty() || dev_ds.is_empty() {
        return Err(user_msg("train and dev splits must be nonempty"));
    }
    let vocab = build_vocab(&train_ds, cfg.vocab_size).user_err()?;
    let eval_opts = EvalOptions {
        k: cfg.head.k,
        ap_mode: cfg.ap_mode,
        head_reduction: cfg.head_reduction,
        seed: cfg.train.seed,
    };

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(&cfg)?, Some(cfg.train.seed), started);
    manifest.input("config", config);
    manifest.input("train", required(&cfg.train_path, "train_path")?);
    manifest.input("dev", required(&cfg.dev_path, "dev_path")?);
    if let Some(p) = &cfg.test_path {
        manifest.input("test", p);
    }

    let variant = cfg.train.variant;
    let mut records = Vec::with_capacity(cfg.train.repeats);
    for r in 0..cfg.train.repeats {
        let seed = cfg.train.seed.wrapping_add(r as u64);
        let mut tcfg = cfg.train.clone();
        tcfg.seed = seed;
        let model = Model::init(cfg.model_config(), vocab.clone(), seed)?;
        eprintln!("repeat {} (seed {seed}): training {variant}", r + 1);
        let run = train_run(model, &train_ds, &dev_ds, &tcfg, &eval_opts, |s| {
            eprintln!(
                "  epoch {:>3}  loss {:.5}  {:.2}s  dev doc F1 {:.4}",
                s.epoch,
                s.train_loss,
                s.seconds,
                s.dev_report.doc_f1.unwrap_or(0.0)
            );
        })?;
        let dir = out_dir.join(format!("repeat-{}", r + 1));
        fs::create_dir_all(&dir)?;
        let ckpt = dir.join("checkpoint.rsat");
        let best_seconds = run.epochs[run.best_epoch - 1].seconds;
        let mut dev_report = run.dev_report;
        dev_report.seconds_per_epoch = Some(run.seconds_per_epoch);
        save_checkpoint(&ckpt, &run.model, run.best_epoch, &run.dev_report, best_seconds)?;
        manifest.output(&format!("checkpoint-{}", r + 1), &ckpt);
        let test_report = match &test_ds {
            Some(t) => {
                let (preds, mut rep) = predict_dataset(&run.model, t, &eval_opts)?;
                rep.seconds_per_epoch = Some(run.seconds_per_epoch);
                let path = dir.join("test_predictions.jsonl");
                write_atomic(&path, predictions_to_jsonl(&preds)?.as_bytes())?;
                manifest.output(&format!("test-predictions-{}", r + 1), &path);
                Some(rep)
            }
            None => None,
        };
        records.push(RepeatRecord {
            seed,
            best_epoch: run.best_epoch,
            dev_report,
            test_report,
            checkpoint: ckpt,
            epochs: run.epochs,
        });
    }

    let dev_reports: Vec<EvalReport> = records.iter().map(|r| r.dev_report).collect();
    let mut rows = vec![TableRow::aggregate(format!("{variant} (dev)"), &dev_reports)?];
    let test_reports: Option<Vec<EvalReport>> = records.iter().map(|r| r.test_report).collect();
    if let Some(t) = &test_reports {
        rows.push(TableRow::aggregate(format!("{variant} (test)"), t)?);
    }
    let table = format_table(&rows);
    print!("{table}");
    let report_json = out_dir.join("report.json");
    write_json(
        &report_json,
        &json!({ "variant": variant, "repeats": records, "aggregate": rows }),
    )?;
    let report_txt = out_dir.join("report.txt");
    write_atomic(&report_txt, table.as_bytes())?;
    manifest.output("report", &report_json).output("table", &report_txt);
    manifest.finish(&out_dir.join("manifest.json"))
}

pub struct EvalArgs<'a> {
    pub checkpoint: Option<&'a Path>,
    pub dataset: &'a Path,
    pub baseline: Option<Baseline>,
    pub k: Option<f64>,
    pub seed: Option<u64>,
    pub doc_only: bool,
    pub out: &'a Path,
}

pub fn eval(args: EvalArgs<'_>) -> Result<()> {
    let started = now();
    let ds = load_dataset(args.dataset)?;
    let token_metrics = args.baseline.is_some() || !args.doc_only;
    if token_metrics && !ds.has_token_labels() {
        return Err(user_msg(format!(
            "{} has no token_labels; token metrics cannot be computed (use --doc-only for document metrics)",
            args.dataset.display()
        )));
    }
    let model = match args.checkpoint {
        Some(p) => Some(
            load_model(p)
                .with_context(|| format!("loading checkpoint {}", p.display()))
                .user_err()?,
        ),
        None => None,
    };
    match (args.baseline, &model) {
        (None, None) => return Err(user_msg("pass --checkpoint or --baseline")),
        (Some(Baseline::TopkAttn), None) => {
            return Err(user_msg("--baseline topk-attn needs a windowed-encoder --checkpoint"))
        }
        (Some(Baseline::TopkAttn), Some(m)) if m.variant().is_compositional() => {
            return Err(user_msg(format!(
                "--baseline topk-attn needs a windowed-encoder checkpoint, got {}",
                m.variant()
            )))
        }
        _ => {}
    }
    if let Some(m) = &model {
        check_sentence_lengths(&ds, m.variant(), m.config.encoder.max_sentence_len)?;
    }
    let k = args.k.or(model.as_ref().map(|m| m.config.head.k)).unwrap_or(8.0);
    if !(k > 0.0 && k <= 100.0) {
        return Err(user_msg(format!("--k must lie in (0, 100], got {k}")));
    }
    let opts = EvalOptions {
        k,
        seed: args.seed.unwrap_or(0),
        ..Default::default()
    };

    let (preds, mut report, label) = match (args.baseline, &model) {
        (Some(b), m) => {
            let (p, r) = baseline_predictions(b, m.as_ref(), &ds, &opts)?;
            let name = match b {
                Baseline::Random => "random".to_string(),
                Baseline::TopkAttn => "topk-attn".to_string(),
            };
            (p, r, name)
        }
        (None, Some(m)) => {
            let (p, r) = predict_dataset(m, &ds, &opts)?;
            (p, r, m.variant().to_string())
        }
        (None, None) => unreachable!("checked above"),
    };
    if args.doc_only {
        report = EvalReport {
            doc_f1: report.doc_f1,
            coverage: report.coverage,
            high_score_fraction: report.high_score_fraction,
            ..EvalReport::default()
        };
    }

    fs::create_dir_all(args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let config = json!({
        "checkpoint": args.checkpoint,
        "dataset": args.dataset,
        "baseline": args.baseline,
        "k": k,
        "seed": opts.seed,
        "doc_only": args.doc_only,
    });
    let mut manifest = RunManifest::new("eval", config, Some(opts.seed), started);
    manifest.input("dataset", args.dataset);
    if let Some(p) = args.checkpoint {
        manifest.input("checkpoint", p);
    }
    let pred_path = args.out.join("predictions.jsonl");
    write_atomic(&pred_path, predictions_to_jsonl(&preds)?.as_bytes())?;
    let report_path = args.out.join("report.json");
    write_json(&report_path, &report)?;
    let table = format_table(&[TableRow::aggregate(label, &[report])?]);
    let table_path = args.out.join("report.txt");
    write_atomic(&table_path, table.as_bytes())?;
    print!("{table}");
    manifest
        .output("predictions", &pred_path)
        .output("report", &report_path)
        .output("table", &table_path);
    manifest.finish(&args.out.join("manifest.json"))
}

pub fn report(predictions: &Path, dataset: &Path, out: &Path) -> Result<()> {
    let started = now();
    let ds = load_dataset(dataset)?;
    let preds = read_predictions(predictions)
        .with_context(|| format!("loading predictions {}", predictions.display()))
        .user_err()?;
    let preds = align_predictions(preds, &ds).user_err()?;
    let title = format!("Rationales: {}", ds.name);
    let html = render_report(&title, &ds, &preds)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    write_atomic(out, html.as_bytes())?;
    let mut manifest = RunManifest::new(
        "report",
        json!({ "predictions": predictions, "dataset": dataset, "out": out }),
        None,
        started,
    );
    manifest
        .input("predictions", predictions)
        .input("dataset", dataset)
        .output("html", out);
    let mut name = out.file_name().unwrap_or_default().to_owned();
    name.push(".manifest.json");
    manifest.finish(&out.with_file_name(name))
}

#[derive(Serialize)]
struct BenchRow {
    variant: ModelVariant,
    seconds_per_epoch: f64,
    epochs: usize,
    final_train_loss: f64,
}

/// Compositional over monolithic when both kinds are present, otherwise
/// second over first.
fn bench_ratio(rows: &[BenchRow]) -> (f64, String) {
    let comp = rows.iter().find(|r| r.variant.is_compositional());
    let mono = rows.iter().find(|r| !r.variant.is_compositional());
    match (comp, mono) {
        (Some(c), Some(m)) => (
            c.seconds_per_epoch / m.seconds_per_epoch,
            format!("{} / {}", c.variant, m.variant),
        ),
        _ => (
            rows[1].seconds_per_epoch / rows[0].seconds_per_epoch,
            format!("{} / {}", rows[1].variant, rows[0].variant),
        ),
    }
}

pub fn bench(config: &Path, overrides: &Overrides, out: Option<&Path>) -> Result<()> {
    let started = now();
    let mut cfg = RunConfig::load(config).user_err()?;
    overrides.apply(&mut cfg);
    cfg.validate().user_err()?;
    if cfg.variants.len() < 2 {
        return Err(user_msg("bench needs at least two entries in `variants`"));
    }
    if cfg.bench_epochs == 0 {
        return Err(user_msg("bench_epochs must be at least 1"));
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| user_msg("no output directory: pass --out or set out_dir"))?;
    let train_path = required(&cfg.train_path, "train_path")?.clone();
    let train_ds = load_dataset(&train_path)?;
    if train_ds.is_empty() {
        return Err(user_msg("train split is empty"));
    }
    for &v in &cfg.variants {
        check_sentence_lengths(&train_ds, v, cfg.encoder.max_sentence_len)?;
    }
    let vocab = build_vocab(&train_ds, cfg.vocab_size).user_err()?;

    let mut rows = Vec::with_capacity(cfg.variants.len());
    for &variant in &cfg.variants {
        let mut mcfg = cfg.model_config();
        mcfg.variant = variant;
        let mut model = Model::init(mcfg, vocab.clone(), cfg.train.seed)?;
        let mut tcfg = cfg.train.clone();
        tcfg.variant = variant;
        let mut opt = Optimizer::new(tcfg.optimizer, tcfg.learning_rate);
        let mut seconds = 0.0;
        let mut loss = 0.0;
        let wall = Instant::now();
        for epoch in 1..=cfg.bench_epochs {
            let stats = train_epoch(&mut model, &mut opt, &train_ds, &tcfg, epoch)?;
            seconds += stats.seconds;
            loss = stats.mean_loss;
        }
        eprintln!(
            "{variant}: {:.2}s wall for {} epochs",
            wall.elapsed().as_secs_f64(),
            cfg.bench_epochs
        );
        rows.push(BenchRow {
            variant,
            seconds_per_epoch: seconds / cfg.bench_epochs as f64,
            epochs: cfg.bench_epochs,
            final_train_loss: loss,
        });
    }
    let (ratio, ratio_label) = bench_ratio(&rows);
    let width = rows.iter().map(|r| r.variant.name().len()).max().unwrap_or(7).max(7);
    let mut table = format!(
        "{:<width$} | seconds/epoch\n{}-+--------------\n",
        "Variant",
        "-".repeat(width)
    );
    for r in &rows {
        table.push_str(&format!(
            "{:<width$} | {:>13.3}\n",
            r.variant.name(),
            r.seconds_per_epoch
        ));
    }
    table.push_str(&format!("ratio ({ratio_label}): {ratio:.3}\n"));
    print!("{table}");

    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let bench_path = out_dir.join("bench.json");
    write_json(
        &bench_path,
        &json!({ "rows": rows, "ratio": ratio, "ratio_of": ratio_label }),
    )?;
    let mut manifest = RunManifest::new("bench", serde_json::to_value(&cfg)?, Some(cfg.train.seed), started);
    manifest
        .input("config", config)
        .input("train", &train_path)
        .output("bench", &bench_path);
    manifest.finish(&out_dir.join("manifest.json"))
}
