//! The `qtsm` binary end to end.

use std::path::PathBuf;
use std::process::{Command, Output};

fn config(name: &str) -> PathBuf {
    [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name].iter().collect()
}

fn qtsm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qtsm")).args(args).output().expect("binary runs")
}

fn json(out: &Output) -> serde_json::Value {
    serde_json::from_slice(&out.stdout).expect("JSON on stdout")
}

#[test]
fn constant_rate_bond() {
    let cfg = config("constant_rate.json");
    let out = qtsm(&["price", "--product", "bond", "--t", "0", "--state", "0.1", "--maturity", "1", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert!((json(&out)["price"].as_f64().unwrap() - 0.951_229_424_5).abs() < 1e-10);
}

#[test]
fn bond_at_maturity() {
    let cfg = config("reference_1d.json");
    let out = qtsm(&["price", "--product", "bond", "--maturity", "0", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    assert_eq!(json(&out)["price"].as_f64(), Some(1.0));
}

#[test]
fn futures_needs_payoff() {
    let cfg = config("constant_rate.json");
    let out = qtsm(&["price", "--product", "futures", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("payoff required"));
}

#[test]
fn unreadable_and_malformed_configs() {
    let out = qtsm(&["price", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    std::fs::write(&path, "{ \"n\": 1,\n \"A\": }").unwrap();
    let out = qtsm(&["price", "--config", path.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 2"));
}

#[test]
fn csv_output() {
    let cfg = config("model_2d.json");
    let out = qtsm(&["--format", "csv", "curve", "--maturities", "1,2,5", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0));
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn validate_reference_brackets_closed_form() {
    let cfg = config("reference_1d.json");
    let out = qtsm(&["validate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v = json(&out);
    assert_eq!(v["closed_form_within_3_sigma"], true, "{v}");
    assert_eq!(v["paths"], 100_000);
    assert_eq!(v["steps"], 500);
}
