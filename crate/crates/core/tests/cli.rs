use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_minima-geom")).args(args).arg("--out").arg(out).output().unwrap()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn geometry_check_passes_and_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["geometry", "--check"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["table1.csv", "table2.csv", "geometry_check.json", "manifest.json"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let checks = json(dir.path().join("geometry_check.json"));
    assert!(checks.as_array().unwrap().iter().all(|c| c["pass"] == true));
}

#[test]
fn geometry_single_function_rows() {
    let dir = tempfile::tempdir().unwrap();
    let sphere = run(dir.path(), &["geometry", "sphere"]);
    assert!(sphere.status.success());
    assert_eq!(String::from_utf8(sphere.stdout).unwrap().lines().count(), 2);
    let himmelblau = run(dir.path(), &["geometry", "himmelblau"]);
    assert_eq!(String::from_utf8(himmelblau.stdout).unwrap().lines().count(), 5);
    let csv = fs::read_to_string(dir.path().join("geometry_himmelblau.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn unknown_function_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["geometry", "ackley"]).status.code(), Some(2));
}

#[test]
fn failure_leaves_incomplete_marker() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["sharpness", "--checkpoint", "missing.ckpt", "--dataset", "missing.csv"]);
    assert_eq!(out.status.code(), Some(4));
    assert!(dir.path().join("INCOMPLETE").exists());
    assert!(!dir.path().join("manifest.json").exists());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"objective":"sphere","n_runz":3}"#).unwrap();
    let out = run(dir.path(), &["study", "--config", bad.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("n_runz"));
}

#[test]
fn train_then_sharpness_and_landscape() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = run(d, &["train", "--objective", "booth", "--samples", "300", "--epochs", "300", "--hidden", "8,8", "--lr", "0.01"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = json(d.join("train_summary.json"));
    assert_eq!(summary["epochs"], 300);
    assert!(summary["train_loss"].as_f64().unwrap() < summary["test_loss"].as_f64().unwrap() * 10.0);

    let ckpt = d.join("params.ckpt");
    let train = d.join("train.csv");
    let (ckpt, train) = (ckpt.to_str().unwrap(), train.to_str().unwrap());
    let sharp_dir = d.join("sharp");
    let out = run(&sharp_dir, &["sharpness", "--checkpoint", ckpt, "--dataset", train, "--k-perturb", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = json(sharp_dir.join("sharpness.json"));
    assert!(report["sam_sharpness"].as_f64().unwrap().is_finite());
    assert_eq!(report["K"], 10);
    assert_eq!(report["checkpoint_hash"], summary["checkpoint_hash"]);
    let manifest = json(sharp_dir.join("manifest.json"));
    assert_eq!(manifest["inputs"].as_array().unwrap().len(), 2);

    let land = d.join("land");
    let out = run(&land, &["landscape", "--checkpoint", ckpt, "--dataset", train, "--resolution", "5"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(land.join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert_eq!(json(land.join("landscape.json"))["resolution"], 5);
}

#[test]
fn objective_landscape_centres_on_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["landscape", "--objective", "sphere", "--resolution", "7", "--normalization", "none"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(json(dir.path().join("landscape.json"))["center_value"], 0.0);
}

#[test]
fn metrics_from_prediction_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("a.jsonl"), "{\"label\":0,\"confidences\":[0.8,0.2]}\n{\"label\":1,\"confidences\":[0.3,0.7]}\n").unwrap();
    fs::write(d.join("b.csv"), "label,c0,c1\n0,0.4,0.6\n1,0.1,0.9\n").unwrap();
    fs::write(d.join("fog.csv"), "0,0.9,0.1\n1,0.6,0.4\n").unwrap();
    let a = d.join("a.jsonl");
    let b = d.join("b.csv");
    let fog = format!("fog:3={}", d.join("fog.csv").display());
    let out = run(d, &["metrics", "--pred", a.to_str().unwrap(), "--pred-b", b.to_str().unwrap(), "--corrupted", &fog]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = json(d.join("metrics.json"));
    assert_eq!(m["accuracy"], 1.0);
    assert_eq!(m["disagreement"], 0.5);
    assert_eq!(m["corruption_accuracy"], 0.5);
}

#[test]
fn dataset_command_respects_scale() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["dataset", "--objective", "beale", "--samples", "1000", "--scale", "0.1"]);
    assert!(out.status.success());
    let csv = fs::read_to_string(dir.path().join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 101);
}

#[test]
fn study_outputs_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = [
        "study", "--objective", "sphere", "--protocol", "controls", "--runs", "2", "--scale", "0.01", "--k-perturb", "5",
    ];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(run(&a, &args).status.success());
    let mut parallel = args.to_vec();
    parallel.extend(["--jobs", "2"]);
    assert!(run(&b, &parallel).status.success());
    for f in ["runs.csv", "aggregate.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let runs = fs::read_to_string(a.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 2 * 4);
}
