use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &str = r#"{
  "epochs": 1,
  "eval_rounds": 2,
  "world": { "n_users": 12, "n_videos": 30 },
  "graph": { "windows": 2 }
}"#;

fn mtdqn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mtdqn")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("config.json");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn train_then_eval_reproduces_results() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("run");
    let o = mtdqn(&["train", "--config", &config, "--seed", "3", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["checkpoint.bin", "results.csv", "events.jsonl", "attention.csv", "loss_curve.csv", "manifest.json"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "train");
    assert_eq!(manifest["seeds"][0], 3);

    let again = dir.path().join("eval");
    let o = mtdqn(&["eval", "--checkpoint", s(&out.join("checkpoint.bin")), "--out", s(&again)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(out.join("results.csv")).unwrap(), fs::read(again.join("results.csv")).unwrap());
}

#[test]
fn identical_runs_write_identical_files() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = mtdqn(&["train", "--config", &config, "--seed", "5", "--out", s(out)]);
        assert!(o.status.success());
    }
    for entry in fs::read_dir(&a).unwrap() {
        let name = entry.unwrap().file_name();
        assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name:?} differs");
    }
}

#[test]
fn ablate_writes_one_row_per_variant_and_seed() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("ablate");
    let o = mtdqn(&["ablate", "--config", &config, "--seeds", "2", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = mtdqn::harness::parse_results_csv(&fs::read_to_string(out.join("results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 8);
}

#[test]
fn baselines_cover_three_models() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("baselines");
    let o = mtdqn(&["baselines", "--config", &config, "--seeds", "1", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(out.join("results.csv")).unwrap();
    for label in ["MT-DQN", "Vanilla-DQN", "Concat-Modal"] {
        assert!(text.contains(label));
    }
}

#[test]
fn simulate_writes_parseable_events() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), SMALL);
    let out = dir.path().join("sim");
    let o = mtdqn(&["simulate", "--config", &config, "--out", s(&out)]);
    assert!(o.status.success());
    let text = fs::read_to_string(out.join("events.jsonl")).unwrap();
    let events = mtdqn::graph::read_events_jsonl(text.as_bytes()).unwrap();
    assert!(!events.is_empty());
}

#[test]
fn invalid_config_exits_one() {
    let dir = TempDir::new().unwrap();
    let config = write_config(dir.path(), r#"{ "fusion": { "d_model": 15 } }"#);
    let o = mtdqn(&["train", "--config", &config, "--out", s(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("divisible"));

    let o = mtdqn(&["train", "--config", s(&dir.path().join("missing.json")), "--out", "x"]);
    assert_eq!(o.status.code(), Some(1));

    let o = mtdqn(&["frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn gradcheck_passes() {
    let o = mtdqn(&["gradcheck"]);
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("tgnn_forward"));
    assert!(text.contains("0 failed"));
}
