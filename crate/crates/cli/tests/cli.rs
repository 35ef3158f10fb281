use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn ltcil(args: &[&str], root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ltcil"))
        .args(args)
        .env("LTCIL_OUTPUT_ROOT", root)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

const SMALL: &str = r#"{
    "dataset": {"kind": "synthetic", "num_classes": 5, "per_class": 30, "feature_dim": 3},
    "test_per_class": 5,
    "scenario": {"kind": "shuffled", "rho": 0.1, "n_max": 20, "num_tasks": 2, "base_classes": 3},
    "memory": {"budget": 2},
    "model": {"hidden": [6]},
    "train": {"epochs_stage1": 2, "epochs_stage2": 1, "milestones": [], "batch_size": 8},
    "seeds": [1, 2],
    "output_dir": "small"
}"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_writes_outputs_and_refuses_reuse() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", SMALL);
    let out = ltcil(&["run", "--config", &cfg], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let root = tmp.path().join("small");
    assert!(root.join("summary.csv").is_file());
    assert!(root.join("seed_1/results.csv").is_file());
    assert!(root.join("seed_2/manifest.json").is_file());
    let first = fs::read(root.join("seed_1/results.csv")).unwrap();

    let again = ltcil(&["run", "--config", &cfg], tmp.path());
    assert_eq!(again.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--overwrite"));

    let forced = ltcil(&["run", "--config", &cfg, "--overwrite"], tmp.path());
    assert!(forced.status.success());
    assert_eq!(first, fs::read(root.join("seed_1/results.csv")).unwrap());
}

#[test]
fn config_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = write(
        tmp.path(),
        "bad.json",
        r#"{"dataset": {"kind": "synthetic"}, "scenario": {"kind": "shuffled", "rho": 0}}"#,
    );
    let out = ltcil(&["validate", "--config", &bad], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.rho"));

    let missing = tmp.path().join("nope.json");
    let out = ltcil(&["run", "--config", missing.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(2));

    let cfg = write(tmp.path(), "cfg.json", SMALL);
    let out = ltcil(&["sweep", "--config", &cfg, "--axis", "lr", "--values", "1"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_three() {
    let tmp = tempfile::tempdir().unwrap();
    // asks for more training examples per class than exist
    let cfg = write(tmp.path(), "cfg.json", &SMALL.replace(r#""n_max": 20"#, r#""n_max": 500"#));
    let out = ltcil(&["run", "--config", &cfg], tmp.path());
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_echoes_defaults_and_manifest_prints_tasks() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(
        tmp.path(),
        "min.json",
        r#"{"dataset": {"kind": "synthetic"}, "scenario": {"kind": "ordered"}}"#,
    );
    let out = ltcil(&["validate", "--config", &cfg], tmp.path());
    assert!(out.status.success());
    let echoed: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(echoed["scenario"]["num_tasks"], 5);
    assert_eq!(echoed["two_stage"], true);

    let out = ltcil(&["manifest", "--config", &cfg, "--seed", "3"], tmp.path());
    assert!(out.status.success());
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["tasks"].as_array().unwrap().len(), 5);
    assert_eq!(manifest["scenario_kind"], "ordered");
}

#[test]
fn sweep_writes_combined_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "cfg.json", SMALL);
    let out = ltcil(&["sweep", "--config", &cfg, "--axis", "memory_budget", "--values", "1,3"], tmp.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("small/sweep_summary.csv")).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[0].starts_with("axis,value,scenario"));
    assert!(lines[1].starts_with("memory_budget,1,shuffled,none,true,"));
    assert!(tmp.path().join("small/memory_budget_3/seed_2/results.csv").is_file());
}
