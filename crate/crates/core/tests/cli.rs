use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"{
  "seed": 3,
  "generator": { "train": 60, "dev": 12, "test": 12 },
  "tagger": { "epochs": 2 },
  "rnng": { "epochs": 2 },
  "eval": { "bootstrap": { "iterations": 50 } }
}"#;

fn rnng(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rnng"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = rnng(dir, args);
    assert!(
        out.status.success(),
        "rnng {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn trained() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("run.json"), CONFIG).unwrap();
    let c = ["--config", "run.json"];
    ok(dir.path(), &[&c[..], &["generate"]].concat());
    ok(dir.path(), &[&c[..], &["rules"]].concat());
    ok(dir.path(), &[&c[..], &["train"]].concat());
    dir
}

#[test]
fn pipeline_runs_and_beam_one_matches_greedy() {
    let dir = trained();
    let p = dir.path();
    let c = ["--config", "run.json"];
    assert!(p.join("runs/model.json").exists());
    assert!(std::fs::read_to_string(p.join("runs/train.log.jsonl")).unwrap().lines().count() > 0);

    ok(p, &[&c[..], &["predict", "--greedy", "--output", "runs/greedy.txt"]].concat());
    ok(p, &[&c[..], &["predict", "--beam", "1", "--output", "runs/beam1.txt"]].concat());
    let greedy = std::fs::read_to_string(p.join("runs/greedy.txt")).unwrap();
    assert_eq!(greedy, std::fs::read_to_string(p.join("runs/beam1.txt")).unwrap());

    let json = ok(p, &[&c[..], &["evaluate", "--pred", "runs/greedy.txt", "--json"]].concat());
    let report: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(report["iterations"], 50);
    assert!(p.join("runs/report.json").exists());

    ok(p, &[&c[..], &["rules", "--lint", "data/dev.txt"]].concat());
}

#[test]
fn checkpoint_refuses_a_different_rule_set() {
    let dir = trained();
    let p = dir.path();
    ok(p, &["--config", "run.json", "--seed", "11", "generate", "--train", "25"]);
    ok(p, &["--config", "run.json", "rules"]);
    let out = rnng(p, &["--config", "run.json", "predict"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("rule set"), "{err}");
    let hashes = err.split(|c: char| !c.is_ascii_hexdigit()).filter(|w| w.len() >= 16).count();
    assert!(hashes >= 2, "expected both fingerprints in: {err}");
}

#[test]
fn missing_inputs_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = rnng(dir.path(), &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("data"));
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(rnng(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(rnng(dir.path(), &["predict", "--beam", "2", "--greedy"]).status.code(), Some(1));
    assert_eq!(rnng(dir.path(), &["--help"]).status.code(), Some(0));
}
