use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use sensorfleet_cli::stamp::hash_outputs;
use sensorfleet_cli::Stage;

const SMALL: &str = r#"{
  "world": { "rows": 256, "cols": 256 },
  "corpus": { "n_patches": 96 },
  "train": { "epochs": 1, "batch_size": 32 },
  "analysis": { "k": 10, "probes": 40, "folds": 3, "trees": 6, "max_depth": 5, "ivf_lists": 4 },
  "agent": { "bootstrap": 1000 }
}"#;

fn sensorfleet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sensorfleet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path) -> String {
    let path = dir.join("small.json");
    fs::write(&path, SMALL).unwrap();
    path.to_str().unwrap().to_string()
}

fn tree(root: &Path) -> BTreeMap<String, String> {
    hash_outputs(root).unwrap()
}

#[test]
fn unknown_config_key_exits_1_and_names_it() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("bad.json");
    fs::write(&path, r#"{ "analysis": { "tress": 5 } }"#).unwrap();
    let out = tmp.path().join("run");
    let o = sensorfleet(&["gen", "--config", path.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("analysis.tress"), "{}", stderr(&o));
    assert!(!out.join("corpus").exists());

    let o = sensorfleet(&["gen", "--set", "agent.kk=3", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("agent.kk"));
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(sensorfleet(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(sensorfleet(&["gen", "--threads", "some"]).status.code(), Some(1));
    assert_eq!(sensorfleet(&["gen", "--config", "/nonexistent/config.json"]).status.code(), Some(1));
    assert_eq!(sensorfleet(&["gen", "--set", "analysis.folds=1"]).status.code(), Some(1));
    assert_eq!(sensorfleet(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_upstream_is_a_runtime_failure_naming_the_stage() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = sensorfleet(&["embed", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("stage `embed`") && err.contains("`gen`"), "{err}");
}

#[test]
fn all_writes_report_then_reruns_as_a_no_op() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small_config(tmp.path());
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = sensorfleet(&["all", "--config", &cfg, "--out", out_s, "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches(" ran").count(), Stage::ALL.len());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["question_count"], 40);
    assert_eq!(report["hit_rate"], 1.0);
    assert!(out.join("report/summary.json").exists());

    // Each stage directory carries the exact config that produced it.
    let root_cfg = fs::read_to_string(out.join("run_config.json")).unwrap();
    for s in Stage::ALL {
        let dir = out.join(s.dir());
        assert!(dir.join("stamp.json").exists(), "{}", s.name());
        assert_eq!(fs::read_to_string(dir.join("run_config.json")).unwrap(), root_cfg);
    }
    let first = tree(&out);

    let o = sensorfleet(&["all", "--config", &cfg, "--out", out_s, "--threads", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout(&o).matches(" skipped").count(), Stage::ALL.len(), "{}", stdout(&o));
    assert_eq!(tree(&out), first);

    let o = sensorfleet(&["verify", "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    // An agent-only change leaves the corpus, encoders and analysis alone.
    let o = sensorfleet(&["all", "--config", &cfg, "--out", out_s, "--threads", "1", "--set", "agent.k=3"]);
    assert_eq!(o.status.code(), Some(0));
    let lines = stdout(&o);
    for name in ["gen", "pretrain", "embed", "geometry", "interp", "compl", "index", "cards"] {
        assert!(lines.lines().any(|l| l.starts_with(name) && l.ends_with("skipped")), "{name}: {lines}");
    }
    for name in ["route", "eval", "report"] {
        assert!(lines.lines().any(|l| l.starts_with(name) && l.ends_with("ran")), "{name}: {lines}");
    }
    let third = tree(&out);
    let upstream = |t: &BTreeMap<String, String>| {
        t.iter().filter(|(k, _)| k.starts_with("checkpoints/") || k.starts_with("embeddings/")).map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>()
    };
    assert_eq!(upstream(&third), upstream(&first));
    assert_ne!(third.get("eval/report.json"), first.get("eval/report.json"));

    // Tampering is caught by verify and triggers a rerun of the stage.
    fs::write(out.join("cards/sar.json"), "{}").unwrap();
    let o = sensorfleet(&["verify", "--out", out_s]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stage `cards`"), "{}", stderr(&o));
    let o = sensorfleet(&["all", "--config", &cfg, "--out", out_s, "--threads", "1", "--set", "agent.k=3"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).lines().any(|l| l.starts_with("cards") && l.ends_with("ran")));
    // The rebuilt cards match; their config copy and stamp now record agent.k = 3.
    let cards = |t: &BTreeMap<String, String>| {
        t.iter().filter(|(k, _)| k.starts_with("cards/") && k.ends_with(".json") && !k.ends_with("run_config.json") && !k.ends_with("stamp.json")).map(|(k, v)| (k.clone(), v.clone())).collect::<Vec<_>>()
    };
    assert_eq!(cards(&tree(&out)), cards(&third));
    assert_eq!(sensorfleet(&["verify", "--out", out_s]).status.code(), Some(0));
}
