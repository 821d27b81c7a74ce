use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const EIT: &str = env!("CARGO_BIN_EXE_eit");

fn eit(dir: &Path, args: &[&str]) -> Output {
    Command::new(EIT).current_dir(dir).args(args).output().unwrap()
}

fn small_config(dir: &Path) -> &'static str {
    std::fs::write(
        dir.join("cfg.json"),
        r#"{
  "forward": {"solver": {"method": "direct"}},
  "mesh_h": 0.13,
  "inversion_mesh_h": 0.13,
  "dataset": {"n_cases": 2, "data_mesh_h": 0.1, "mode": "fixed"},
  "lm": {"rel_loss_threshold": 1e-5, "max_iterations": 8}
}"#,
    )
    .unwrap();
    "cfg.json"
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn dataset_then_experiment() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = small_config(dir);
    let out = eit(dir, &["--config", cfg, "--out", "d", "--seed", "5", "dataset"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let lines = std::fs::read_to_string(dir.join("d/dataset.jsonl")).unwrap();
    assert_eq!(lines.lines().count(), 2);

    let out = eit(dir, &["--config", cfg, "--out", "e", "experiment", "--dataset", "d/dataset.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for name in ["results.csv", "results.json", "summary.json", "hist_true_analytic.svg", "manifest.json"] {
        assert!(dir.join("e").join(name).exists(), "missing {name}");
    }
    let mut rows = csv::Reader::from_path(dir.join("e/results.csv")).unwrap();
    let headers = rows.headers().unwrap().clone();
    let col = headers.iter().position(|h| h == "err_ad_an").unwrap();
    let mut n = 0;
    for row in rows.records() {
        let v: f64 = row.unwrap()[col].parse().unwrap();
        assert!(v < 1e-6, "engines disagree by {v}");
        n += 1;
    }
    assert_eq!(n, 2);

    let fused = eit(dir, &["--config", cfg, "--out", "f", "--seed", "5", "experiment"]);
    assert!(fused.status.success(), "{}", String::from_utf8_lossy(&fused.stderr));
    assert_eq!(
        std::fs::read(dir.join("d/dataset.jsonl")).unwrap(),
        std::fs::read(dir.join("f/dataset.jsonl")).unwrap()
    );
    assert_eq!(
        std::fs::read(dir.join("e/results.csv")).unwrap(),
        std::fs::read(dir.join("f/results.csv")).unwrap()
    );

    let e = read_json(&dir.join("e/manifest.json"));
    let inputs = e["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 1);
    assert_eq!(inputs[0]["sha256"].as_str().unwrap().len(), 64);

    let manifest = read_json(&dir.join("d/manifest.json"));
    assert_eq!(manifest["command"], "dataset");
    assert_eq!(manifest["seed"], 5);
    assert_eq!(manifest["config"]["dataset"]["seed"], 5);
    assert_eq!(manifest["config_sha256"].as_str().unwrap().len(), 64);
    assert!(manifest["artifacts"].as_array().unwrap().iter().any(|a| a == "dataset.jsonl"));
}

#[test]
fn same_seed_same_dataset() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = small_config(dir);
    for out in ["a", "b"] {
        let o = eit(dir, &["--config", cfg, "--out", out, "--seed", "9", "dataset", "--cases", "3"]);
        assert!(o.status.success());
    }
    let a = std::fs::read(dir.join("a/dataset.jsonl")).unwrap();
    let b = std::fs::read(dir.join("b/dataset.jsonl")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn simulate_then_reconstruct() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("data.json"), r#"{"forward": {"solver": {"method": "direct"}}, "mesh_h": 0.1}"#).unwrap();
    let o = eit(dir, &["--config", "data.json", "--out", "s", "simulate", "--r", "0.35", "--cx", "0.2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = small_config(dir);
    let o = eit(
        dir,
        &["--config", cfg, "--out", "r", "reconstruct", "--measurements", "s/measurements.json", "--mode", "fixed"],
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rec = read_json(&dir.join("r/reconstruction.json"));
    assert!((rec["params"]["r"].as_f64().unwrap() - 0.35).abs() < 0.1);
    let trace = std::fs::read_to_string(dir.join("r/trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,loss"));
}

#[test]
fn jacobian_compare_agrees() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let cfg = small_config(dir);
    let o = eit(dir, &["--config", cfg, "--out", "j", "--seed", "7", "jacobian", "--engine", "compare", "--cases", "4"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut rows = csv::Reader::from_path(dir.join("j/comparison.csv")).unwrap();
    let col = rows.headers().unwrap().iter().position(|h| h == "relative_frobenius").unwrap();
    let vals: Vec<f64> = rows.records().map(|r| r.unwrap()[col].parse().unwrap()).collect();
    assert_eq!(vals.len(), 4);
    assert!(vals.iter().all(|&v| v <= 1e-8), "{vals:?}");

    let o = eit(dir, &["--config", cfg, "--out", "fd", "jacobian", "--engine", "fd"]);
    assert!(o.status.success());
    let j = read_json(&dir.join("fd/jacobian.json"));
    assert_eq!(j["engine"], "fd");
    assert_eq!(j["rows"].as_array().unwrap().len(), 240);
}

#[test]
fn errors_map_to_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("bad.json"), r#"{"sede": 1}"#).unwrap();
    let o = eit(dir, &["--config", "bad.json", "mesh"]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(o.stderr.trim_ascii()).unwrap();
    assert_eq!(err["error"]["kind"], "config");

    std::fs::write(dir.join("neg.json"), r#"{"mesh_h": -1.0}"#).unwrap();
    let o = eit(dir, &["--config", "neg.json", "--out", "m", "mesh"]);
    assert_eq!(o.status.code(), Some(2));

    let o = eit(dir, &["--out", "x", "reconstruct", "--measurements", "missing.json"]);
    assert_eq!(o.status.code(), Some(4));

    let o = eit(dir, &["--out", "x", "--jobs", "0", "bench"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eit(dir, &["--out", "x", "--jobs", "2", "mesh"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eit(dir, &["--out", "x", "simulate", "--params", "{\"r\": 0.3}"]);
    assert_eq!(o.status.code(), Some(2));
    let o = eit(dir, &["--out", "x", "experiment", "--dataset", "d.jsonl", "--cases", "3"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn mesh_export_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let o = eit(dir, &["--out", "m", "mesh", "--h", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mesh = read_json(&dir.join("m/mesh.json"));
    assert_eq!(mesh["elements"].as_array().unwrap().len(), 816);
}

#[test]
fn simulate_with_json_params() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    let params = r#"{"r":0.3,"cx":0,"cy":0,"sigma_in":1.4,"sigma_out":0.7}"#;
    let o = eit(dir, &["--out", "s", "--seed", "3", "simulate", "--params", params, "--h", "0.1"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let m = read_json(&dir.join("s/measurements.json"));
    assert_eq!(m["voltages"].as_array().unwrap().len(), 240);
    assert_eq!(m["mesh_h"], 0.1);
    assert_eq!(m["seed"], 3);
    let manifest = read_json(&dir.join("s/manifest.json"));
    assert_eq!(manifest["config"]["anomaly"]["sigma_in"], 1.4);
}
