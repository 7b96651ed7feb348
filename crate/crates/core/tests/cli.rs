use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use sohforge::pipeline::ExperimentConfig;

const SMALL: &str = r#"{
  "data": {"synthetic": {"n_cells": 6, "n_cycles_per_cell": 6, "samples_per_curve": 80}},
  "input_length": 40,
  "train": {"max_epochs": 2, "patience": 1},
  "forest": {"n_trees": 5, "min_samples_leaf": 1},
  "k_folds": 3,
  "sensitivity_samples": 4
}"#;

fn sohforge(args: &[&str], env_seed: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_sohforge"));
    cmd.args(args).env_remove("SOHFORGE_SEED").env_remove("RUST_LOG");
    if let Some(s) = env_seed {
        cmd.env("SOHFORGE_SEED", s);
    }
    cmd.output().unwrap()
}

fn setup(body: &str) -> (tempfile::TempDir, PathBuf, PathBuf) {
    let d = tempfile::tempdir().unwrap();
    let cfg = d.path().join("cfg.json");
    fs::write(&cfg, body).unwrap();
    let out = d.path().join("out");
    (d, cfg, out)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn resolved(out: &Path) -> ExperimentConfig {
    serde_json::from_str(&fs::read_to_string(out.join("resolved_config.json")).unwrap()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn synth_writes_dataset_and_resolved_config() {
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(&["synth", "-c", s(&cfg), "-o", s(&out)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    let cells = sohforge::dataio::ingest_csv(out.join("cells.csv")).unwrap();
    assert_eq!(cells.len(), 6);
    let r = resolved(&out);
    assert_eq!(r.master_seed, Some(0));
    assert_eq!(r.output_dir, out);

    // the written dataset passes validation
    let o = sohforge(&["validate", "--data", s(&out.join("cells.csv"))], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
}

#[test]
fn resolved_dump_round_trips() {
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(&["windows", "-c", s(&cfg), "-o", s(&out)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let first = resolved(&out);
    let out2 = out.with_file_name("again");
    let o = sohforge(&["windows", "-c", s(&out.join("resolved_config.json")), "-o", s(&out2)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let second = resolved(&out2);
    assert_eq!(ExperimentConfig { output_dir: first.output_dir.clone(), ..second }, first);
    assert_eq!(fs::read(out.join("windows.csv")).unwrap(), fs::read(out2.join("windows.csv")).unwrap());
    let text = fs::read_to_string(out.join("windows.csv")).unwrap();
    assert_eq!(text.lines().count(), 1 + 6 * 6);
}

#[test]
fn override_is_echoed_in_dump() {
    // conditions is empty so the sweep has nothing to run; the dump must still appear
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(
        &["sweep", "-c", s(&cfg), "-o", s(&out), "--set", "window.q_max_dist.low=0.05", "--set", "conditions=[]"],
        None,
    );
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(resolved(&out).window.q_max_dist.low, 0.05);
}

#[test]
fn seed_precedence() {
    let (_d, cfg, out) = setup(SMALL);
    assert_eq!(sohforge(&["synth", "-c", s(&cfg), "-o", s(&out)], Some("7")).status.code(), Some(0));
    assert_eq!(resolved(&out).master_seed, Some(7));
    assert_eq!(
        sohforge(&["synth", "-c", s(&cfg), "-o", s(&out), "--seed", "9"], Some("7")).status.code(),
        Some(0)
    );
    assert_eq!(resolved(&out).master_seed, Some(9));
    let o = sohforge(&["synth", "-c", s(&cfg), "-o", s(&out)], Some("abc"));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("SOHFORGE_SEED"));
}

#[test]
fn usage_and_config_errors_exit_1() {
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(&["frobnicate"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).to_lowercase().contains("usage"));
    assert_eq!(sohforge(&["--help"], None).status.code(), Some(0));

    let o = sohforge(&["synth", "-c", s(&cfg), "-o", s(&out), "--set", "window.q_max.low=1"], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("window.q_max"));

    let o = sohforge(&["synth", "-c", s(&cfg), "-o", s(&out), "--set", "k_folds=1"], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));

    let o = sohforge(&["synth", "-c", s(&cfg.with_file_name("missing.json"))], None);
    assert_eq!(o.status.code(), Some(1));

    let bad = cfg.with_file_name("bad.json");
    fs::write(&bad, "{\n  \"k_folds\": 3,\n  \"bogus\": true\n}").unwrap();
    let o = sohforge(&["synth", "-c", s(&bad)], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains(":3:"), "{}", stderr(&o));

    let o = sohforge(&["synth", "-o", s(&out)], None);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn validate_rejects_bad_data() {
    let (d, _cfg, _out) = setup(SMALL);
    let csv = d.path().join("cells.csv");
    fs::write(&csv, "cell_id,cycle_index,soh,nominal_capacity_ah,voltage_v,capacity_ah\nc0,0,abc,1.1,3.5,0.0\n").unwrap();
    let before = fs::read(&csv).unwrap();
    let o = sohforge(&["validate", "--data", s(&csv)], None);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert_eq!(fs::read(&csv).unwrap(), before);
}

#[test]
fn unwritable_output_is_runtime_failure() {
    let (d, cfg, _out) = setup(SMALL);
    let blocker = d.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = sohforge(&["synth", "-c", s(&cfg), "-o", s(&blocker.join("sub"))], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn train_then_sensitivity() {
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(&["train", "-c", s(&cfg), "-o", s(&out)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in ["soh_cnn.json", "dsoh_cnn.json", "rf_cnn.json", "training.json"] {
        assert!(out.join("models").join(f).exists(), "{f}");
    }
    let model = out.join("models").join("soh_cnn.json");
    let o = sohforge(&["sensitivity", "--model", s(&model), "-c", s(&cfg), "-o", s(&out)], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sensitivity").join("SOH_CNN.csv")).unwrap();
    assert!(csv.lines().count() > 40);
}

#[test]
fn evaluate_writes_report() {
    let (_d, cfg, out) = setup(SMALL);
    let o = sohforge(&["evaluate", "-c", s(&cfg), "-o", s(&out), "--jobs", "1"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let report: sohforge::pipeline::EvaluationReport =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.folds.len(), 3);
    let table = fs::read_to_string(out.join("mae_table.csv")).unwrap();
    assert_eq!(table.lines().count(), 4);
    assert_eq!(fs::read_to_string(out.join("importance_ratios.csv")).unwrap().lines().count(), 4);
    assert_eq!(fs::read_dir(out.join("trajectories")).unwrap().count(), 6);
}
