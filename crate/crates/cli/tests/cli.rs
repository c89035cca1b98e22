use std::path::Path;
use std::process::{Command, Output};

use invariant_forge::symbolic::parse_str;

const BIN: &str = env!("CARGO_BIN_EXE_invariant-forge");

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).env_remove("INVARIANT_FORGE_SEED").args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

/// Small enough to run every stage in seconds.
const TINY: &str = r#"{
  "n_traj": 4,
  "n_obs": 20,
  "train": {"hidden": [8], "epochs": 3},
  "generator": {
    "policy_hidden": 16,
    "pretrain": {"n_corpus": 100, "epochs": 1},
    "ppo": {"iterations": 3, "episodes": 8, "n_pairs": 32}
  },
  "experiment": {"noise_levels": [0.0, 0.02], "n_trajs": [4], "runs": 2}
}"#;

fn tiny_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn simulate_is_idempotent() {
    let dir = tiny_dir();
    let p = dir.path();
    for out in ["a", "b"] {
        let o = run(p, &["--config", "tiny.json", "simulate", "--system", "pendulum", "--seed", "3", "--out", out]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["dataset.json", "dataset.csv"] {
        assert_eq!(std::fs::read(p.join("a").join(f)).unwrap(), std::fs::read(p.join("b").join(f)).unwrap());
    }
}

#[test]
fn verify_exit_codes() {
    let dir = tiny_dir();
    let p = dir.path();
    let ok = run(p, &["verify", "--exact-field", "--system", "ho", "--expr", "add mul x x mul v v", "--drift"]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(p.join("out/verify_report.json")).unwrap()).unwrap();
    assert_eq!(report["field_fingerprint"], "exact:ho");
    assert_eq!(report["verdict"], true);

    let bad = run(p, &["verify", "--exact-field", "--system", "ho", "--expr", "x"]);
    assert_eq!(code(&bad), 1);
    let constant = run(p, &["verify", "--exact-field", "--system", "ho", "--expr", "3"]);
    assert_eq!(code(&constant), 1);
    let garbage = run(p, &["verify", "--exact-field", "--system", "ho", "--expr", "add x"]);
    assert_eq!(code(&garbage), 2);
}

#[test]
fn bad_configuration_is_a_usage_error() {
    let dir = tiny_dir();
    let p = dir.path();
    std::fs::write(p.join("typo.json"), r#"{"sytem": "ho"}"#).unwrap();
    assert_eq!(code(&run(p, &["--config", "typo.json", "simulate"])), 2);
    assert_eq!(code(&run(p, &["simulate", "--system", "nope"])), 2);
    assert_eq!(code(&run(p, &["train", "--dataset", "missing.json"])), 2);
}

#[test]
fn train_then_discover_writes_parseable_candidates() {
    let dir = tiny_dir();
    let p = dir.path();
    let cfg = ["--config", "tiny.json"];
    assert_eq!(code(&run(p, &[&cfg[..], &["simulate", "--out", "d"]].concat())), 0);
    // three epochs cannot reach the target; the model is still written
    let t = run(p, &[&cfg[..], &["train", "--dataset", "d/dataset.json", "--out", "m"]].concat());
    assert_eq!(code(&t), 1);
    assert!(p.join("m/model.json").exists() && p.join("m/train_report.json").exists());

    let mut outputs = Vec::new();
    for out in ["c1.json", "c2.json"] {
        let args = ["discover", "--model", "m/model.json", "--dataset", "d/dataset.json", "--out", out];
        let o = run(p, &[&cfg[..], &args].concat());
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        outputs.push(std::fs::read(p.join(out)).unwrap());
    }
    assert_eq!(outputs[0], outputs[1]);
    let records: Vec<serde_json::Value> = serde_json::from_slice(&outputs[0]).unwrap();
    assert!(!records.is_empty() && records.len() <= 32);
    let vars = ["x".to_string(), "v".to_string()];
    for r in &records {
        parse_str(r["expr_prefix"].as_str().unwrap(), &vars).unwrap();
    }
}

#[test]
fn experiment_and_report_round_trip() {
    let dir = tiny_dir();
    let p = dir.path();
    let o = run(p, &["--config", "tiny.json", "experiment", "--out", "r"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let md = std::fs::read(p.join("r/grid.md")).unwrap();
    std::fs::remove_file(p.join("r/grid.md")).unwrap();
    assert_eq!(code(&run(p, &["report", "--results", "r"])), 0);
    assert_eq!(std::fs::read(p.join("r/grid.md")).unwrap(), md);
    assert_eq!(code(&run(p, &["report", "--results", "nowhere"])), 2);
}
