//! End-to-end runs of every subcommand on a small generated cohort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::Value;

use trans_cli::run_cli;

const TINY: &str = r#"{"hidden_dim": 8, "heads": 2, "layers": 1, "embedding_dim": 8, "se_dim": 2, "te_dim": 4,
    "epochs": 2, "batch_size": 16, "label_groups": 50, "seed": 3}"#;

fn run(args: &[&str]) -> i32 {
    run_cli(std::iter::once("trans").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    data: PathBuf,
    config: PathBuf,
}

fn fixture(patients: &str) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let data = root.join("cohort.jsonl");
    let config = root.join("cfg.json");
    fs::write(&config, TINY).unwrap();
    assert_eq!(run(&["generate", "--patients", patients, "--seed", "7", "--out", s(&data)]), 0);
    Fixture {
        _dir: dir,
        root,
        data,
        config,
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn generation_is_byte_reproducible() {
    let f = fixture("100");
    let again = f.root.join("again.jsonl");
    let truth = f.root.join("truth.json");
    assert_eq!(
        run(&["generate", "--patients", "100", "--seed", "7", "--out", s(&again), "--truth", s(&truth)]),
        0
    );
    assert_eq!(fs::read(&f.data).unwrap(), fs::read(&again).unwrap());
    assert_eq!(fs::read_to_string(&again).unwrap().lines().count(), 100);
    assert!(read_json(&truth)["patients"].as_object().unwrap().len() == 100);
    let other = f.root.join("other.jsonl");
    assert_eq!(run(&["generate", "--patients", "100", "--seed", "8", "--out", s(&other)]), 0);
    assert_ne!(fs::read(&f.data).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn train_eval_explain_pipeline() {
    let f = fixture("80");
    let ckpt = f.root.join("ckpt");
    assert_eq!(run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&ckpt)]), 0);
    for file in ["manifest.json", "params.bin", "config.json", "vocab.json", "model.json", "train_log.jsonl"] {
        assert!(ckpt.join(file).exists(), "missing {file}");
    }
    assert_eq!(fs::read_to_string(ckpt.join("train_log.jsonl")).unwrap().lines().count(), 2);

    let report = f.root.join("report.json");
    assert_eq!(
        run(&["eval", "--ckpt", s(&ckpt), "--data", s(&f.data), "--split", "test", "--k", "10,20,30", "--out", s(&report)]),
        0
    );
    let entries = read_json(&report);
    let entries = entries.as_array().unwrap();
    assert_eq!(entries.len(), 6);
    for e in entries {
        let keys: Vec<&str> = e.as_object().unwrap().keys().map(String::as_str).collect();
        assert_eq!(keys.len(), 5, "{keys:?}");
        let mean = e["mean"].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&mean));
        assert_eq!((e["std"].as_f64(), e["n_runs"].as_u64()), (Some(0.0), Some(1)));
    }
    for metric in ["visit_precision", "code_accuracy"] {
        let series: Vec<f64> = entries
            .iter()
            .filter(|e| e["metric"] == metric)
            .map(|e| e["mean"].as_f64().unwrap())
            .collect();
        assert_eq!(series.len(), 3);
        if metric == "code_accuracy" {
            assert!(series.windows(2).all(|w| w[0] <= w[1]), "{series:?}");
        }
    }

    let base = f.root.join("baseline.json");
    assert_eq!(run(&["eval", "--ckpt", s(&ckpt), "--data", s(&f.data), "--baseline", "--out", s(&base)]), 0);
    assert_eq!(read_json(&base).as_array().unwrap().len(), 6);

    let label = first_test_label(&ckpt, &f.data);
    let imp = f.root.join("imp.csv");
    assert_eq!(
        run(&[
            "explain", "--ckpt", s(&ckpt), "--data", s(&f.data), "--label", &label.to_string(), "--max-nodes", "5",
            "--steps", "5", "--out", s(&imp),
        ]),
        0
    );
    let csv = fs::read_to_string(&imp).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("code,kind,mean_importance,count"));
    let values: Vec<f64> = lines.map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
    assert!(!values.is_empty());
    assert!(values.windows(2).all(|w| w[0] >= w[1]));
}

fn first_test_label(ckpt: &Path, data: &Path) -> usize {
    use trans_core::ehr::{load_cohort, samples_for_cohort, split_cohort};
    let trained = trans_core::model::load_trained(ckpt).unwrap();
    let records = load_cohort(data, None).unwrap().records;
    let parts = split_cohort(&records, trained.model.config.split_ratios(), trained.model.config.seed).unwrap();
    let samples = samples_for_cohort(&parts.test, &trained.vocab).samples;
    *samples[0].target.iter().next().unwrap()
}

#[test]
fn repeats_are_aggregated() {
    let f = fixture("60");
    let ckpt = f.root.join("multi");
    assert_eq!(
        run(&["train", "--config", s(&f.config), "--data", s(&f.data), "--out", s(&ckpt), "--repeats", "2", "--sequential"]),
        0
    );
    assert!(ckpt.join("run-00/params.bin").exists() && ckpt.join("run-01/params.bin").exists());
    assert_ne!(fs::read(ckpt.join("run-00/params.bin")).unwrap(), fs::read(ckpt.join("run-01/params.bin")).unwrap());
    let report = f.root.join("r.json");
    assert_eq!(run(&["eval", "--ckpt", s(&ckpt), "--data", s(&f.data), "--k", "10", "--out", s(&report)]), 0);
    let entries = read_json(&report);
    assert_eq!(entries.as_array().unwrap().len(), 2);
    assert_eq!(entries[0]["n_runs"].as_u64(), Some(2));
}

#[test]
fn grid_reports_every_point() {
    let f = fixture("60");
    let space = f.root.join("space.json");
    fs::write(&space, r#"{"heads": [1, 3], "lr": [0.01]}"#).unwrap();
    let out = f.root.join("grid");
    assert_eq!(
        run(&["grid", "--space", s(&space), "--config", s(&f.config), "--data", s(&f.data), "--out", s(&out)]),
        0
    );
    let report = read_json(&out.join("grid.json"));
    let rows = report["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0]["error"].is_null() && rows[1]["error"].is_string());
    assert_eq!(report["best_index"].as_u64(), Some(0));
    assert!(out.join("best/params.bin").exists());
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&[]), 2);
    assert_eq!(run(&["frobnicate"]), 2);
    assert_eq!(run(&["generate", "--patients", "ten", "--out", "x"]), 2);
    assert_eq!(run(&["eval", "--ckpt", "c", "--data", "d", "--k", "0", "--out", "r"]), 2);
    assert_eq!(run(&["eval", "--ckpt", "c", "--data", "d", "--split", "dev", "--out", "r"]), 2);
    assert_eq!(run(&["train", "--data", "d", "--out", "o", "--repeats", "0"]), 2);
    assert_eq!(run(&["--help"]), 0);
}

#[test]
fn runtime_errors_are_structured() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.jsonl");
    let out = Command::new(env!("CARGO_BIN_EXE_trans"))
        .args(["train", "--data", s(&missing), "--out", s(&dir.path().join("ckpt"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "io");

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"hidden_dim": 9, "heads": 2}"#).unwrap();
    let data = dir.path().join("c.jsonl");
    assert_eq!(run(&["generate", "--patients", "10", "--out", s(&data)]), 0);
    let out = Command::new(env!("CARGO_BIN_EXE_trans"))
        .args(["train", "--config", s(&bad), "--data", s(&data), "--out", s(&dir.path().join("ckpt"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(out.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "config");
    assert!(!dir.path().join("ckpt").exists());
}
