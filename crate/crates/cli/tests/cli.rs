use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_optdesign"));
    c.env("OPTDESIGN_THREADS", "2");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn scratch(name: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("optdesign-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir.join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn gen_is_deterministic() {
    let a = run(&["gen", "--kind", "gaussian", "--d", "3", "--n", "20", "--seed", "1"]);
    let b = run(&["gen", "--kind", "gaussian", "--d", "3", "--n", "20", "--seed", "1"]);
    assert!(a.status.success());
    assert_eq!(a.stdout, b.stdout);
    let text = String::from_utf8(a.stdout).unwrap();
    assert!(text.starts_with("optdesign v1 d=3 n=20 m=0"));
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn missing_dimension_is_a_usage_error() {
    let out = run(&["gen", "--kind", "gaussian", "--n", "20"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--d"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = run(&["solve", "x.txt", "--objective", "q", "--method", "relax"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn missing_input_is_an_io_error() {
    let out = run(&["solve", "/nonexistent/instance.txt", "--objective", "d", "--method", "relax"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn relax_report_meets_tolerance() {
    let inst = scratch("relax.txt");
    let report = scratch("relax.json");
    assert!(run(&["gen", "--kind", "gaussian", "--d", "3", "--n", "20", "--seed", "1", "--b", "8", "--out", p(&inst)])
        .status
        .success());
    let out = run(&["solve", p(&inst), "--objective", "d", "--method", "relax", "--tol", "1e-8", "--report", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    assert_eq!(r["schema"], 1);
    assert_eq!(r["termination_reason"], "Converged");
    // The D gap is measured in ln det, relative to max(1, |ln det|).
    let ln_det = 3.0 * r["objective_value"].as_f64().unwrap().ln();
    assert!(r["duality_gap_estimate"].as_f64().unwrap() <= 1e-8 * ln_det.abs().max(1.0));
    assert!((r["costs"][0].as_f64().unwrap() - 8.0).abs() < 1e-9);
    let x: Vec<f64> = r["x"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect();
    assert!(x.iter().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn round_reports_are_byte_identical() {
    let inst = scratch("round.txt");
    assert!(run(&["gen", "--kind", "gaussian", "--d", "3", "--n", "900", "--seed", "1", "--b", "600", "--out", p(&inst)])
        .status
        .success());
    let reports: Vec<Vec<u8>> = (0..2)
        .map(|i| {
            let path = scratch(&format!("round{i}.json"));
            let trace = scratch(&format!("round{i}.csv"));
            let out = run(&[
                "solve", p(&inst), "--objective", "a", "--method", "round", "--eps", "0.01", "--seed", "7", "--report",
                p(&path), "--trace", p(&trace),
            ]);
            assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
            std::fs::read(&path).unwrap()
        })
        .collect();
    assert_eq!(reports[0], reports[1]);
    let r: Value = serde_json::from_slice(&reports[0]).unwrap();
    assert_eq!(r["seed"], 7);
    assert!(r["phase"].is_object());
    assert!(r["costs"][0].as_f64().unwrap() <= 600.0);
}

#[test]
fn fedorov_toy_ratio() {
    let inst = scratch("toy.txt");
    std::fs::write(&inst, "optdesign v1 d=2 n=4 m=1\n1 0\n1 0\n0 1\n0 2\nbudget=2 1 1 1 1\n").unwrap();
    let report = scratch("toy.json");
    let out = run(&["solve", p(&inst), "--objective", "d", "--method", "fedorov", "--report", p(&report)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = read_json(&report);
    let (b, d) = (2.0, 2.0);
    let ratio = r["approximation_ratio"].as_f64().unwrap();
    assert!(ratio >= (b - d - 1.0) / b);
    // {e1, 2e2} is optimal for both the integral and fractional problems.
    assert!((r["objective_value"].as_f64().unwrap() - 2.0).abs() < 1e-12);
    assert!((ratio - 1.0).abs() < 1e-6);
}

#[test]
fn fixture_two_file_has_expected_shape() {
    let out = run(&["gen", "--kind", "fixture-e2", "--b", "4", "--N", "100"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "optdesign v1 d=2 n=8 m=1");
    assert_eq!(lines[1], "1.0 0.0");
    let s = (50.0f64).sqrt();
    let v: Vec<f64> = lines[5].split_whitespace().map(|t| t.parse().unwrap()).collect();
    assert!((v[0] - s).abs() < 1e-12 && (v[1] - s).abs() < 1e-12);
    assert!(lines[9].starts_with("budget=4"));
}

#[test]
fn odd_budget_fixture_is_rejected() {
    assert_eq!(run(&["gen", "--kind", "fixture-e2", "--b", "3"]).status.code(), Some(2));
}

#[test]
fn graph_total_reff_full_budget() {
    let g = scratch("k4.txt");
    std::fs::write(&g, "graph 4 6\n0 1 1\n0 2 1\n0 3 1\n1 2 1\n1 3 1\n2 3 1\n").unwrap();
    let out = run(&["solve", p(&g), "--objective", "a", "--method", "round", "--budget", "6", "--eps", "0.1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r: Value = serde_json::from_slice(&out.stdout).unwrap();
    // K4: L† has eigenvalues 1/4 (three times), so n·tr(L†) = 3.
    assert!((r["objective_value"].as_f64().unwrap() - 3.0).abs() < 1e-8);
}

#[test]
fn verify_traps_passes() {
    let out = run(&["verify", "--suite", "traps"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().filter(|l| l.starts_with("PASS")).count() >= 5);
    assert!(!text.lines().any(|l| l.starts_with("FAIL")));
}

#[test]
fn verify_lemmas_small() {
    let out = run(&["verify", "--suite", "lemmas", "--runs", "50", "--seed-base", "3"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stdout));
}
