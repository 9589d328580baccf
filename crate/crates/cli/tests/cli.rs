use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};

fn rationale(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rationale"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn write_json(path: &Path, v: &Value) {
    fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
}

fn synth_small(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("synth.json");
    write_json(
        &spec,
        &json!({
            "preset": "sentiment", "n_docs": 40, "mean_len": 40.0, "min_len": 20, "max_len": 60,
            "min_sentence_len": 4, "max_sentence_len": 10, "vocab_size": 60, "seed": 11
        }),
    );
    let data = dir.join("data");
    let out = rationale(&["synth", "--config", p(&spec), "--out", p(&data)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    data
}

fn train_config(dir: &Path, data: &Path, variant: &str) -> std::path::PathBuf {
    let cfg = dir.join(format!("{variant}.json"));
    write_json(
        &cfg,
        &json!({
            "train_path": data.join("train.jsonl"), "dev_path": data.join("dev.jsonl"),
            "test_path": data.join("test.jsonl"), "variant": variant, "epochs": 2, "repeats": 2,
            "learning_rate": 0.01, "batch_size": 4, "hidden": 8, "n_heads": 2, "n_layers": 1,
            "ff_width": 16, "max_sentence_len": 16, "window": 9, "score_hidden": 8, "doc_hidden": 8,
            "variants": ["compositional-ranked", "weighted-monolithic"], "bench_epochs": 1
        }),
    );
    cfg
}

#[test]
fn synth_is_deterministic_and_writes_manifest() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let da = synth_small(a.path());
    let db = synth_small(b.path());
    for split in ["train", "dev", "test"] {
        let f = format!("{split}.jsonl");
        assert_eq!(fs::read(da.join(&f)).unwrap(), fs::read(db.join(&f)).unwrap());
    }
    let m: Value = serde_json::from_slice(&fs::read(da.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "synth");
    assert_eq!(m["artifact_hashes"].as_object().unwrap().len(), 4);
}

#[test]
fn train_eval_report_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let cfg = train_config(dir.path(), &data, "weighted-monolithic");
    let run = dir.path().join("run");
    let out = rationale(&["train", "--config", p(&cfg), "--out", p(&run), "--seed", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&fs::read(run.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["repeats"].as_array().unwrap().len(), 2);
    assert_eq!(report["repeats"][1]["seed"], 4);
    let ckpt = run.join("repeat-1/checkpoint.rsat");
    assert!(ckpt.is_file());
    assert!(run.join("repeat-1/checkpoint.rsat.json").is_file());
    assert!(run.join("report.txt").is_file());

    let ev = dir.path().join("eval");
    let test = data.join("test.jsonl");
    let out = rationale(&["eval", "--checkpoint", p(&ckpt), "--dataset", p(&test), "--out", p(&ev)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Value = serde_json::from_slice(&fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        rep,
        report["repeats"][0]["test_report"]
            .as_object()
            .map(|o| {
                let mut o = o.clone();
                o.insert("seconds_per_epoch".into(), Value::Null);
                Value::Object(o)
            })
            .unwrap()
    );

    let attn = dir.path().join("attn");
    let out = rationale(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--dataset",
        p(&test),
        "--baseline",
        "topk-attn",
        "--out",
        p(&attn),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let rnd = dir.path().join("random");
    let out = rationale(&[
        "eval",
        "--baseline",
        "random",
        "--dataset",
        p(&test),
        "--seed",
        "1",
        "--out",
        p(&rnd),
    ]);
    assert_eq!(code(&out), 0);
    let rep: Value = serde_json::from_slice(&fs::read(rnd.join("report.json")).unwrap()).unwrap();
    assert!(rep["doc_f1"].is_null());
    assert!(rep["map"].is_number());

    let html = dir.path().join("report.html");
    let out = rationale(&[
        "report",
        "--predictions",
        p(&ev.join("predictions.jsonl")),
        "--dataset",
        p(&test),
        "--out",
        p(&html),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let page = fs::read_to_string(&html).unwrap();
    assert!(page.starts_with("<!DOCTYPE html>"));
    assert!(dir.path().join("report.html.manifest.json").is_file());
}

#[test]
fn bench_reports_a_ratio() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let cfg = train_config(dir.path(), &data, "compositional-ranked");
    let out_dir = dir.path().join("bench");
    let out = rationale(&["bench", "--config", p(&cfg), "--out", p(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let b: Value = serde_json::from_slice(&fs::read(out_dir.join("bench.json")).unwrap()).unwrap();
    let rows = b["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let ratio = b["ratio"].as_f64().unwrap();
    let expect = rows[0]["seconds_per_epoch"].as_f64().unwrap() / rows[1]["seconds_per_epoch"].as_f64().unwrap();
    assert!((ratio - expect).abs() < 1e-12);
    assert!(String::from_utf8_lossy(&out.stdout).contains("ratio"));
}

#[test]
fn user_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let data = synth_small(dir.path());
    let test = data.join("test.jsonl");
    let out_dir = dir.path().join("o");

    let missing = rationale(&[
        "eval",
        "--baseline",
        "random",
        "--dataset",
        "/nonexistent.jsonl",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&missing), 2);

    let bad_cfg = dir.path().join("bad.json");
    fs::write(&bad_cfg, r#"{"hiddn": 3}"#).unwrap();
    assert_eq!(
        code(&rationale(&["train", "--config", p(&bad_cfg), "--out", p(&out_dir)])),
        2
    );

    let unlabeled = dir.path().join("unlabeled.jsonl");
    fs::write(
        &unlabeled,
        "{\"doc_id\":\"a\",\"sentences\":[[\"x\",\"y\"]],\"doc_label\":1}\n",
    )
    .unwrap();
    let out = rationale(&[
        "eval",
        "--baseline",
        "random",
        "--dataset",
        p(&unlabeled),
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("token_labels"));

    let malformed = dir.path().join("malformed.jsonl");
    fs::write(&malformed, "{\"doc_id\":\"a\"\n").unwrap();
    assert_eq!(
        code(&rationale(&[
            "eval",
            "--baseline",
            "random",
            "--dataset",
            p(&malformed),
            "--out",
            p(&out_dir)
        ])),
        2
    );

    let cfg = train_config(dir.path(), &data, "compositional-ranked");
    let run = dir.path().join("run");
    assert_eq!(code(&rationale(&["train", "--config", p(&cfg), "--out", p(&run)])), 0);
    let out = rationale(&[
        "eval",
        "--checkpoint",
        p(&run.join("repeat-1/checkpoint.rsat")),
        "--dataset",
        p(&test),
        "--baseline",
        "topk-attn",
        "--out",
        p(&out_dir),
    ]);
    assert_eq!(code(&out), 2);

    let out = rationale(&["train", "--config", p(&cfg), "--out", p(&run), "--k", "0"]);
    assert_eq!(code(&out), 2);
}
