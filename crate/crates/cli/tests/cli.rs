use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odeco-train")).args(args).output().expect("binary runs")
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

fn stdout_json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

#[test]
fn decompose_exact_symm_tt2() {
    let dir = tempfile::tempdir().unwrap();
    let t = path(dir.path(), "t.json");
    let truth = path(dir.path(), "truth.json");
    let g = run(&["generate", "--kind", "symm-tt2", "--n", "5", "--ranks", "2,3", "--seed", "4", "--output", &t, "--truth", &truth]);
    assert!(g.status.success(), "{}", String::from_utf8_lossy(&g.stderr));
    assert!(Path::new(&truth).exists());

    let out = run(&["decompose", "--kind", "symm-tt2", "--input", &t, "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0));
    let doc = stdout_json(&out);
    assert!(doc["relativeError"].as_f64().unwrap() < 1e-10);
    assert_eq!(doc["carriages"].as_array().unwrap().len(), 2);
}

#[test]
fn decompose_writes_file_and_reports_error() {
    let dir = tempfile::tempdir().unwrap();
    let t = path(dir.path(), "t.json");
    let d = path(dir.path(), "d.json");
    assert!(run(&["generate", "--kind", "symm-ttl", "--n", "4", "--ranks", "2,2,2", "--seed", "2", "--output", &t])
        .status
        .success());
    let out = run(&["decompose", "--kind", "symm-ttl", "--input", &t, "--output", &d]);
    assert_eq!(out.status.code(), Some(0));
    assert!(stdout_json(&out)["relativeError"].as_f64().unwrap() < 1e-10);
    let written: Value = serde_json::from_str(&fs::read_to_string(&d).unwrap()).unwrap();
    assert_eq!(written["meta"]["positions"][0]["position"], 2);
}

#[test]
fn decompose_odeco() {
    let dir = tempfile::tempdir().unwrap();
    let t = path(dir.path(), "t.json");
    assert!(run(&["generate", "--kind", "odeco-tt2", "--n", "3", "--ranks", "3,3", "--seed", "9", "--output", &t])
        .status
        .success());
    let out = run(&["decompose", "--kind", "odeco-tt2", "--input", &t]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let doc = stdout_json(&out);
    assert!(doc["relativeError"].as_f64().unwrap() < 1e-8);
    assert_eq!(doc["meta"]["dodd"]["method"], "sinkhorn");
}

#[test]
fn dodd_zero_entry_is_solver_failure() {
    let dir = tempfile::tempdir().unwrap();
    let x = path(dir.path(), "x.json");
    fs::write(&x, r#"{"shape":[2,2],"data":[1.0,0.0,0.5,2.0]}"#).unwrap();
    let out = run(&["dodd", "--method", "sinkhorn", "--input", &x]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "ZeroEntry");
    assert_eq!(err["row"], 0);
    assert_eq!(err["col"], 1);
}

#[test]
fn dodd_square_and_general() {
    let dir = tempfile::tempdir().unwrap();
    let x = path(dir.path(), "x.json");
    assert!(run(&["generate", "--kind", "dodd-square", "--n", "4", "--seed", "3", "--output", &x]).status.success());
    for method in ["sinkhorn", "procrustes"] {
        let out = run(&["dodd", "--method", method, "--input", &x]);
        assert_eq!(out.status.code(), Some(0));
        let f = stdout_json(&out);
        assert_eq!(f["converged"], true);
        assert!(f["orthogonalityError"].as_f64().unwrap() < 1e-10);
        assert_eq!(f["Q"].as_array().unwrap().len(), 4);
    }

    let g = path(dir.path(), "g.json");
    assert!(run(&["generate", "--kind", "dodd-general", "--m", "3", "--n", "2", "--seed", "3", "--d", "12", "--output", &g])
        .status
        .success());
    let out = run(&["dodd", "--method", "general", "--input", &g, "--d", "12", "--seed", "5"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout_json(&out)["d"], 12);
}

#[test]
fn malformed_json_is_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let x = path(dir.path(), "x.json");
    fs::write(&x, "{\"shape\": [2, 2], \"data\": [1.0").unwrap();
    let out = run(&["dodd", "--input", &x]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "Json");

    let missing = run(&["decompose", "--kind", "symm-tt2", "--input", &path(dir.path(), "nope.json")]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(run(&["decompose", "--kind", "bogus"]).status.code(), Some(2));
}

#[test]
fn bench_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "table1_row1.json");
    fs::write(&cfg, r#"{"kind":"symm-tt2","n":5,"ranks":[2,3],"trials":100,"seed":7}"#).unwrap();
    let mut csvs = Vec::new();
    for out_dir in ["a", "b"] {
        let o = path(dir.path(), out_dir);
        let out = run(&["bench", "--config", &cfg, "--out-dir", &o]);
        assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
        assert_eq!(stdout_json(&out)["successCount"], 100);
        let csv = fs::read_to_string(dir.path().join(out_dir).join("table1_row1.csv")).unwrap();
        let summary = fs::read_to_string(dir.path().join(out_dir).join("table1_row1_summary.json")).unwrap();
        assert!(dir.path().join(out_dir).join("table1_row1_iterations.csv").exists());
        csvs.push((csv, summary));
    }
    assert_eq!(csvs[0], csvs[1]);
    let lines: Vec<&str> = csvs[0].0.lines().collect();
    assert_eq!(lines[0], "trial,seed,relErr,iterations,converged,psdAttempts,runtimeSec");
    assert_eq!(lines.len(), 101);
}

#[test]
fn bench_rejects_drc_violation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = path(dir.path(), "bad.json");
    fs::write(&cfg, r#"{"kind":"symm-ttl","n":4,"ranks":[2,4,3],"trials":3}"#).unwrap();
    let out = run(&["bench", "--config", &cfg, "--out-dir", &path(dir.path(), "o")]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["code"], "InvalidConfig");
}

#[test]
fn generate_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let a = path(dir.path(), "a.json");
    let b = path(dir.path(), "b.json");
    for p in [&a, &b] {
        let out = run(&["generate", "--kind", "symm-tt2", "--n", "5", "--ranks", "5,5", "--noise-sigma", "1e-6", "--seed", "8", "--output", p]);
        assert!(out.status.success());
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
}

#[test]
fn help_documents_schemas() {
    let out = run(&["--help"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(text.contains("\"shape\""));
    assert!(text.contains("noiseSigma"));
}
