use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bcbf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bcbf")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| {
        panic!("{e}: stdout {:?} stderr {:?}", String::from_utf8_lossy(&out.stdout), String::from_utf8_lossy(&out.stderr))
    })
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn write_lines(dir: &Path, name: &str, values: impl IntoIterator<Item = f64>) -> PathBuf {
    let path = dir.join(name);
    let text: String = values.into_iter().map(|v| format!("{v}\n")).collect();
    fs::write(&path, text).unwrap();
    path
}

/// Collision config shortened so CLI tests stay quick.
fn short_config(dir: &Path, n_runs: usize) -> PathBuf {
    let text = fs::read_to_string(configs_dir().join("collision.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["max_time"] = 0.3.into();
    cfg["n_runs"] = n_runs.into();
    let path = dir.join("short.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

#[test]
fn bounds_at_minimum_n_returns_minimum() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_lines(dir.path(), "s.txt", (0..29).map(|i| 3.0 + ((i * 7) % 29) as f64));
    let out = bcbf(&["bounds", f.to_str().unwrap(), "--measure", "var", "--tau", "0.1", "--delta", "0.05"]);
    assert!(out.status.success());
    let v = json(&out);
    assert_eq!(v["value"], 3.0);
    assert_eq!(v["k"], 29);
    assert_eq!(v["n"], 29);
}

#[test]
fn bounds_of_constant_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_lines(dir.path(), "c.txt", std::iter::repeat_n(0.75, 300));
    for measure in ["var", "cvar", "expectation"] {
        let out = bcbf(&["bounds", f.to_str().unwrap(), "--measure", measure, "--lb", "0.75", "--weights"]);
        assert!(out.status.success(), "{measure}");
        let v = json(&out);
        assert!((v["value"].as_f64().unwrap() - 0.75).abs() < 1e-12, "{measure}: {v}");
        assert_eq!(v["weights"].as_array().unwrap().len(), 300);
    }
}

#[test]
fn bounds_with_too_few_samples_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let f = write_lines(dir.path(), "s.txt", (0..28).map(f64::from));
    let out = bcbf(&["bounds", f.to_str().unwrap(), "--measure", "var", "--tau", "0.1", "--delta", "0.05"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("requires N ≥ 29"));
}

#[test]
fn bounds_parse_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let f = dir.path().join("bad.txt");
    fs::write(&f, "1.0\nnot-a-number\n").unwrap();
    assert_eq!(bcbf(&["bounds", f.to_str().unwrap()]).status.code(), Some(1));
    assert_eq!(bcbf(&["bounds", "/nonexistent/file"]).status.code(), Some(1));
    let g = write_lines(dir.path(), "g.txt", (0..200).map(f64::from));
    // CVaR needs an essential lower bound.
    assert_eq!(bcbf(&["bounds", g.to_str().unwrap(), "--measure", "cvar"]).status.code(), Some(1));
}

#[test]
fn validate_meets_coverage() {
    for measure in ["var", "cvar"] {
        let out = bcbf(&["validate", "--measure", measure, "--tau", "0.1", "--delta", "0.05", "--n", "200", "--trials", "5000"]);
        assert!(out.status.success());
        let v = json(&out);
        assert!(v["violation_rate"].as_f64().unwrap() <= 0.0593, "{v}");
        assert_eq!(v["pass"], true);
    }
}

#[test]
fn validate_rejects_zero_trials() {
    let out = bcbf(&["validate", "--trials", "0"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn simulate_is_byte_identical_without_timing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 1);
    let mut files = Vec::new();
    for run in ["a", "b"] {
        let out_dir = dir.path().join(run);
        let out = bcbf(&[
            "simulate",
            "--config",
            cfg.to_str().unwrap(),
            "--seed",
            "17",
            "--out-dir",
            out_dir.to_str().unwrap(),
            "--trace",
            "full",
            "--no-timing",
        ]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        files.push((fs::read(out_dir.join("simulate.json")).unwrap(), fs::read(out_dir.join("trace.csv")).unwrap()));
    }
    assert_eq!(files[0], files[1]);
    let trace = String::from_utf8(files[0].1.clone()).unwrap();
    assert!(trace.starts_with("t,p_x,p_y,theta,u_v,u_omega,h_tilde_min,empirical_var_min,qp_time_us,flags"));
}

#[test]
fn missing_or_invalid_config_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = bcbf(&["simulate", "--config", "/nonexistent.json", "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));

    let text = fs::read_to_string(configs_dir().join("collision.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["unexpected_key"] = 1.into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, cfg.to_string()).unwrap();
    let out = bcbf(&["benchmark", "--config", bad.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unexpected_key"));
}

#[test]
fn config_with_too_few_samples_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs_dir().join("collision.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["n_samples"] = 100.into();
    let path = dir.path().join("few.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out = bcbf(&["simulate", "--config", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn benchmark_outputs_and_counts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = short_config(dir.path(), 3);
    let out_dir = dir.path().join("bench");
    let out = bcbf(&[
        "benchmark",
        "--config",
        cfg.to_str().unwrap(),
        "--workers",
        "2",
        "--out-dir",
        out_dir.to_str().unwrap(),
        "--trace",
        "summary",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_slice(&fs::read(out_dir.join("benchmark.json")).unwrap()).unwrap();
    let methods = summary["methods"].as_array().unwrap();
    assert_eq!(methods.len(), 3);
    for m in methods {
        let total: u64 = ["success", "collision", "timeout"].iter().map(|k| m[k].as_u64().unwrap()).sum();
        assert_eq!(total, 3);
        assert_eq!(m["N"], 200);
        assert!(m["t_avg_ms"].as_f64().unwrap() >= 0.0);
    }
    let table = fs::read_to_string(out_dir.join("benchmark.csv")).unwrap();
    assert!(table.starts_with("method,N,success,collision,timeout,t_avg_ms\n"));
    assert_eq!(table.lines().count(), 4);
    let runs = fs::read_to_string(out_dir.join("benchmark_runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 9);
}

#[test]
fn shift_compares_two_methods() {
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(configs_dir().join("shift.json")).unwrap();
    let mut cfg: Value = serde_json::from_str(&text).unwrap();
    cfg["max_time"] = 0.2.into();
    cfg["n_runs"] = 2.into();
    let path = dir.path().join("shift.json");
    fs::write(&path, cfg.to_string()).unwrap();
    let out_dir = dir.path().join("shift");
    let out = bcbf(&["shift", "--config", path.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap(), "--trace", "full", "--no-timing"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    let labels: Vec<&str> = v.as_array().unwrap().iter().map(|m| m["method"].as_str().unwrap()).collect();
    assert_eq!(labels, ["VaR_0.1", "VaR_0.1^0.09"]);
    let traces = fs::read_dir(out_dir.join("shift_traces")).unwrap().count();
    assert_eq!(traces, 4);
}

#[test]
fn shipped_configs_parse() {
    for name in ["collision.json", "shift.json", "tracking.json"] {
        let dir = tempfile::tempdir().unwrap();
        let text = fs::read_to_string(configs_dir().join(name)).unwrap();
        let mut cfg: Value = serde_json::from_str(&text).unwrap();
        cfg["max_time"] = 0.01.into();
        let path = dir.path().join(name);
        fs::write(&path, cfg.to_string()).unwrap();
        let out = bcbf(&["simulate", "--config", path.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
    }
}
