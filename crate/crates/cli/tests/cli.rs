use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spinbath"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = run(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn levels_reports_eight_er167_crossings() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["levels"]);
    let crossings = json(&dir.path().join("crossings.json"));
    let list = crossings.as_array().unwrap();
    assert_eq!(list.len(), 8);
    let fields: Vec<f64> = list.iter().map(|c| c["B_mT"].as_f64().unwrap()).collect();
    assert!(fields.windows(2).all(|w| w[1] > w[0]));
    assert!(fields.iter().all(|b| (9.0..63.0).contains(b)), "{fields:?}");
    assert_eq!(list[5]["transition"], "mI=+3/2");
    assert_eq!(csv_rows(&dir.path().join("levels.csv")).len(), 16 * 201);
}

#[test]
fn kramers_levels_are_two_branches() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["levels", "--species", "Er", "--points", "11"]);
    assert_eq!(csv_rows(&dir.path().join("levels.csv")).len(), 2 * 11);
    assert_eq!(json(&dir.path().join("crossings.json")).as_array().unwrap().len(), 1);
}

#[test]
fn empty_sweep_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["levels", "--points", "0"]).status.code(), Some(2));
}

#[test]
fn spectrum_without_resonator_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, "{}").unwrap();
    let out = run(dir.path(), &["--config", cfg.to_str().unwrap(), "spectrum", "simulate"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn constant_overrides_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"constants": {"hbar": 1.0}}"#).unwrap();
    assert_eq!(run(dir.path(), &["--config", cfg.to_str().unwrap(), "budget"]).status.code(), Some(3));
}

#[test]
fn spectrum_simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["spectrum", "simulate", "--fields", "81", "--freqs", "81", "--noise", "0.005"]);
    let input = dir.path().join("spectrum.csv");
    ok(dir.path(), &["spectrum", "fit", "--input", input.to_str().unwrap()]);
    let fit = json(&dir.path().join("spectrum_fit.json"));
    let text = fit.to_string();
    assert!(text.contains("gens"), "{text}");
}

#[test]
fn budget_table_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["budget", "--temps-mk", "23,100,530"]);
    let rows = csv_rows(&dir.path().join("budget.csv"));
    assert_eq!(rows.len(), 3);
    let col = |r: &Vec<String>, k: usize| r[k].parse::<f64>().unwrap();
    assert!(rows.iter().all(|r| col(r, 3) == 12.0 && col(r, 4) >= 12.0));
    assert!(rows.windows(2).all(|w| col(&w[1], 4) > col(&w[0], 4)));
    ok(dir.path(), &["budget", "--temps-mk", "23,530", "--zero-sd"]);
    for r in csv_rows(&dir.path().join("budget.csv")) {
        assert_eq!(col(&r, 2), 0.0);
        assert!(col(&r, 4) >= col(&r, 1));
    }
    assert_eq!(run(dir.path(), &["budget", "--temps-mk", "23,-5"]).status.code(), Some(2));
    assert_eq!(run(dir.path(), &["budget", "--temps-mk", "0"]).status.code(), Some(2));
}

#[test]
fn rotation_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["rotation", "--species", "Er", "--count", "61"]);
    let rows = csv_rows(&dir.path().join("rotation.csv"));
    assert_eq!(rows.len(), 61);
    let b = |r: &Vec<String>| r[3].parse::<f64>().unwrap();
    assert!((b(&rows[0]) - 250.38).abs() < 0.05);
    assert!((b(&rows[60]) - 37.26).abs() < 0.05);
}

#[test]
fn three_pulse_simulate_then_fit() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["echo", "simulate"]);
    let input = dir.path().join("echo.csv");
    ok(dir.path(), &["echo", "fit3pe", "--input", input.to_str().unwrap()]);
    let fit = json(&dir.path().join("echo_fit3pe.json"));
    let params = fit["fits"][0]["parameters"].as_array().unwrap();
    let value = |name: &str| params.iter().find(|p| p["parameter"] == name).unwrap()["value"].as_f64().unwrap();
    assert!((value("gamma_sd_er_kHz") / 379.4 - 1.0).abs() < 0.05);
    assert!((value("rate_er_per_ms") / 1.328 - 1.0).abs() < 0.05);
}

#[test]
fn two_pulse_power_sweep_is_ordered() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["echo", "simulate", "--kind", "2PE", "--temps-mk", "23", "--gamma0-hz", "100,300,900"]);
    let input = dir.path().join("echo.csv");
    ok(dir.path(), &["echo", "fit2pe", "--input", input.to_str().unwrap()]);
    let fits = json(&dir.path().join("echo_fit2pe.json"));
    let g: Vec<f64> = fits.as_array().unwrap().iter().map(|f| f["Gamma0_Hz"].as_f64().unwrap()).collect();
    assert_eq!(g.len(), 3);
    assert!(g.windows(2).all(|w| w[1] > w[0]), "{g:?}");
}

#[test]
fn same_seed_reproduces_output() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        ok(d.path(), &["--seed", "7", "echo", "simulate"]);
    }
    let read = |d: &tempfile::TempDir| std::fs::read(d.path().join("echo.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
    let c = tempfile::tempdir().unwrap();
    ok(c.path(), &["--seed", "8", "echo", "simulate"]);
    assert_ne!(read(&a), read(&c));
}

#[test]
fn thermometry_and_fieldmap() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["thermal", "--gens-khz", "14100"]);
    let t = json(&dir.path().join("thermal.json"));
    assert!(t.to_string().contains("temperature"), "{t}");
    ok(dir.path(), &["fieldmap"]);
    let f = json(&dir.path().join("fieldmap.json"));
    assert!(f.to_string().contains("gamma_tilde"), "{f}");
}
