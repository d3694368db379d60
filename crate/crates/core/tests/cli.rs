use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn labp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labp")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, cfg: &Value) -> String {
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string(cfg).unwrap()).unwrap();
    path.to_string_lossy().into_owned()
}

fn run(cfg: &Value, extra: &[&str]) -> (TempDir, Output) {
    let dir = TempDir::new().unwrap();
    let path = write_config(dir.path(), cfg);
    let out = dir.path().join("out");
    let mut args = vec!["run", path.as_str(), "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let output = labp(&args);
    (dir, output)
}

fn small_scan() -> Value {
    json!({ "experiment": "lap_scan", "lambda_grid": [1.0, 4.0], "resolution": 4096 })
}

#[test]
fn empty_grid_is_a_validation_error() {
    let (_dir, out) = run(&json!({ "experiment": "lap_scan", "lambda_grid": [] }), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda_grid"));
}

#[test]
fn unknown_field_is_a_validation_error() {
    let (_dir, out) = run(&json!({ "experiment": "lap_scan", "lamda_grid": [1.0] }), &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda_grid"));
}

#[test]
fn missing_config_file_is_a_validation_error() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("nope.json");
    let out = labp(&["run", missing.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_experiment_is_rejected() {
    let (_dir, out) = run(&json!({ "experiment": "teleport" }), &[]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn lap_scan_writes_one_row_per_estimate_and_energy() {
    let (dir, out) = run(&small_scan(), &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/lap_scan.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(*header.last().unwrap(), "flag");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 14 * 2);
    assert!(rows.iter().all(|r| r.split(',').count() == header.len()));

    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    for key in ["config", "flags", "warnings", "wall_seconds", "version", "columns", "flag_values", "failures", "rows"] {
        assert!(manifest.get(key).is_some(), "manifest lacks {key}");
    }
    assert_eq!(manifest["rows"], json!(28));
    assert_eq!(manifest["config"]["lambda_grid"], json!([1.0, 4.0]));
}

#[test]
fn resolution_flag_overrides_the_config() {
    let (dir, out) = run(&small_scan(), &["--resolution", "2048"]);
    assert_eq!(out.status.code(), Some(0));
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("out/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["resolution"], json!(2048));
}

#[test]
fn output_does_not_depend_on_thread_count() {
    let (a, out_a) = run(&small_scan(), &["--threads", "1"]);
    let (b, out_b) = run(&small_scan(), &["--threads", "3"]);
    assert_eq!(out_a.status.code(), Some(0));
    assert_eq!(out_b.status.code(), Some(0));
    let csv_a = fs::read(a.path().join("out/lap_scan.csv")).unwrap();
    let csv_b = fs::read(b.path().join("out/lap_scan.csv")).unwrap();
    assert_eq!(csv_a, csv_b);
}

#[test]
fn identities_run_reports_every_identity() {
    let cfg = json!({ "experiment": "identities", "lambda_grid": [1.0], "epsilon_grid": [0.1], "resolution": 4096 });
    let (dir, out) = run(&cfg, &[]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/identities.csv")).unwrap();
    for id in ["charge", "lagrangean", "morawetz"] {
        assert!(csv.lines().any(|l| l.starts_with(id)), "no {id} row");
    }
}

#[test]
fn help_lists_the_run_command() {
    let out = labp(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&out.stdout).contains("run"));
}
