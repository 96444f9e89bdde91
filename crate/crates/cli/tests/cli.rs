use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn skipfree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_skipfree")).args(args).output().unwrap()
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn model(dir: &TempDir, name: &str, json: &str) -> PathBuf {
    let path = dir.path().join(name);
    std::fs::write(&path, json).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn close(v: &Value, want: f64, tol: f64) -> bool {
    (v.as_f64().unwrap() - want).abs() <= tol
}

#[test]
fn scale_table_for_symmetric_walk() {
    let dir = TempDir::new().unwrap();
    let m05 = model(&dir, "m05.json", r#"{"h":1,"rate_up":0.5,"down":[{"k":1,"rate":0.5}]}"#);
    let text = stdout(&skipfree(&["scale", "--model", p(&m05), "--q", "0.5", "--n-max", "3"]));
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("k,x,W,Z,W_scaled"));
    let w: Vec<&str> = lines.map(|l| l.split(',').nth(2).unwrap()).collect();
    assert_eq!(w, ["2", "6", "16", "42"]);
}

#[test]
fn classify_emits_json() {
    let dir = TempDir::new().unwrap();
    let m07 = model(&dir, "m07.json", r#"{"h":1,"rate_up":0.7,"down":[{"k":1,"rate":0.3}]}"#);
    let v: Value = serde_json::from_str(&stdout(&skipfree(&["classify", "--model", p(&m07)]))).unwrap();
    assert_eq!(v["direction"], "ToPlusInfinity");
    assert!(close(&v["psi_prime_0"], 0.4, 1e-12));
    assert_eq!(v["phi_0"].as_f64(), Some(0.0));
    assert!(close(&v["phi_prime_0"], 2.5, 1e-12));
}

#[test]
fn reconstruct_then_ladder_round_trips() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("parent.json");
    let text = stdout(&skipfree(&[
        "reconstruct", "--gamma", "0.571428571", "--q", "0", "--phi", "0.3", "--h", "1", "--out", p(&out),
    ]));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(close(&v["x"], 7.0 / 3.0, 1e-8));
    assert!(close(&v["model"]["rate_up"], 0.3, 1e-12));
    assert!(close(&v["model"]["down"][0]["rate"], 0.7, 1e-8));
    assert_eq!(v["model"]["down"][0]["k"], 1);

    let ladder: Value = serde_json::from_str(&stdout(&skipfree(&["ladder", "--model", p(&out)]))).unwrap();
    assert!(close(&ladder["gamma_asc"], 0.571428571, 1e-9));
    assert!(close(&ladder["q_desc"], 0.0, 1e-9));
    assert!(close(&ladder["phi"][0], 0.3, 1e-9));
}

#[test]
fn json_tables_and_pretty_csv() {
    let dir = TempDir::new().unwrap();
    let m07 = model(&dir, "m07.json", r#"{"h":1,"rate_up":0.7,"down":[{"k":1,"rate":0.3}]}"#);
    let text = stdout(&skipfree(&["psi", "--model", p(&m07), "--beta", "0,1", "--format", "json"]));
    let v: Value = serde_json::from_str(&text).unwrap();
    assert!(close(&v[1]["psi"], 0.7 * (1f64.exp() - 1.0) + 0.3 * ((-1f64).exp() - 1.0), 1e-12));
    let text = stdout(&skipfree(&["ruin", "--model", p(&m07), "--x", "0,2", "--pretty"]));
    assert!(text.lines().all(|l| l.len() == text.lines().next().unwrap().len()));
}

#[test]
fn validation_errors_exit_2() {
    assert_eq!(skipfree(&["classify", "--frobnicate"]).status.code(), Some(2));
    assert_eq!(skipfree(&["nonsense"]).status.code(), Some(2));
    let dir = TempDir::new().unwrap();
    let bad = model(&dir, "bad.json", "{\"h\": 1,\n \"rate_up\": 1,\n \"dwn\": []}");
    let out = skipfree(&["classify", "--model", p(&bad)]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dwn"));
}

#[test]
fn negative_mass_exits_3() {
    let out = skipfree(&["reconstruct", "--phi", "0.5,0.9"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn simulate_reports_z_scores() {
    let dir = TempDir::new().unwrap();
    let m07 = model(&dir, "m07.json", r#"{"h":1,"rate_up":0.7,"down":[{"k":1,"rate":0.3}]}"#);
    let text = stdout(&skipfree(&[
        "simulate", "--model", p(&m07), "--q", "0.5", "--x", "1", "--y", "3", "--paths", "4000", "--seed", "7",
    ]));
    assert!(text.starts_with("quantity,analytic,mc_mean,mc_stderr,z\n"));
    assert!(text.lines().any(|l| l.starts_with("two_sided_up,")));
}
