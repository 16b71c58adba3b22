use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hilbert-ot"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).arg("--quiet").output().expect("spawn hilbert-ot")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn write_config(dir: &Path, name: &str, json: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, json).unwrap();
    p.to_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const TINY: &str = r#"{
  "dataset": "parallel",
  "trainer": {"epochs": 4, "batch_size": 32, "probe_every": 2, "probe_size": 32},
  "network": {"hidden": [16]},
  "eval": {"n": 64, "gen_data_n": 8, "plot_n": 16}
}"#;

#[test]
fn gen_data_writes_perpendicular_rows_deterministically() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"dataset": "perpendicular", "eval": {"gen_data_n": 4}}"#);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["gen-data", "--config", &cfg, "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    let src = fs::read_to_string(a.join("source.csv")).unwrap();
    let rows: Vec<&str> = src.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    for r in &rows {
        let c2: f64 = r.split(',').nth(3).unwrap().parse().unwrap();
        assert_eq!(c2, 0.0);
    }
    for f in ["source.csv", "target.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn gen_data_rejects_zero_samples() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", r#"{"eval": {"gen_data_n": 0}}"#);
    let o = run(&["gen-data", "--config", &cfg, "--out", s(&dir.path().join("o"))]);
    assert_ne!(code(&o), 0);
}

#[test]
fn unknown_config_key_is_a_usage_error_with_line_number() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", "{\n  \"trainer\": {\"epoch\": 3}\n}");
    let o = run(&["gen-data", "--config", &cfg, "--out", s(dir.path())]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn bad_arguments_exit_with_usage_code() {
    assert_eq!(code(&run(&["no-such-command"])), 1);
    assert_eq!(code(&run(&["train", "--seed-override", "x"])), 1);
}

#[test]
fn zero_epoch_train_then_eval_identity_checkpoint() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(
        dir.path(),
        "c.json",
        r#"{"dataset": "perpendicular", "trainer": {"epochs": 0}, "eval": {"n": 2000}}"#,
    );
    let out = dir.path().join("run");
    let o = run(&["train", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(out.join("checkpoints/transport.json").exists());
    assert!(out.join("checkpoints/potential.json").exists());
    assert!(!out.join("metrics.csv").exists());

    let o = run(&["eval", "--config", &cfg, "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let m: Value = serde_json::from_slice(&o.stdout).unwrap();
    let dt = m["d_target"].as_f64().unwrap();
    assert!((dt - 2.0 / 3.0).abs() <= 0.05 * 2.0 / 3.0, "d_target {dt}");
    assert_eq!(m["n"], 2000);
    let saved: Value = serde_json::from_str(&fs::read_to_string(out.join("eval-metrics.json")).unwrap()).unwrap();
    assert_eq!(saved, m);
    assert!(out.join("eval-metrics.csv").exists());
}

#[test]
fn eval_rejects_missing_checkpoint_and_mismatched_modes() {
    let dir = TempDir::new().unwrap();
    let o = run(&["eval", "--out", s(&dir.path().join("empty"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing"));

    let cfg16 = write_config(dir.path(), "k16.json", r#"{"trainer": {"epochs": 0}}"#);
    let out = dir.path().join("run");
    assert_eq!(code(&run(&["train", "--config", &cfg16, "--out", s(&out)])), 0);
    let cfg8 = write_config(dir.path(), "k8.json", r#"{"basis": {"kind": "fourier", "num_modes": 8}}"#);
    let ck = out.join("checkpoints/transport.json");
    let o = run(&["eval", "--config", &cfg8, "--out", s(&dir.path().join("e")), "--checkpoint", s(&ck)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn train_is_reproducible_and_writes_documented_layout() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["train", "--config", &cfg, "--out", s(out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in [
        "metrics.csv",
        "metrics.json",
        "trainlog.csv",
        "checkpoints/transport.json",
        "checkpoints/potential.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let log = fs::read_to_string(a.join("trainlog.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);

    let resolved: Value = serde_json::from_str(&fs::read_to_string(a.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["covariance"].as_array().unwrap().len(), 16);
    assert_eq!(resolved["output_dir"], s(&a));

    let c = dir.path().join("c");
    let o = run(&["train", "--config", &cfg, "--out", s(&c), "--seed-override", "5"]);
    assert_eq!(code(&o), 0);
    let resolved: Value = serde_json::from_str(&fs::read_to_string(c.join("resolved-config.json")).unwrap()).unwrap();
    assert_eq!(resolved["seeds"]["data"], 20);
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(c.join("metrics.csv")).unwrap());

    // The resolved config reproduces the run it came from.
    let d = dir.path().join("d");
    let rc = a.join("resolved-config.json");
    assert_eq!(code(&run(&["train", "--config", s(&rc), "--out", s(&d)])), 0);
    assert_eq!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(d.join("metrics.csv")).unwrap());
}

#[test]
fn plot_is_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let out = dir.path().join("run");
    assert_eq!(code(&run(&["train", "--config", &cfg, "--out", s(&out)])), 0);
    assert_eq!(code(&run(&["plot", "--run-dir", s(&out)])), 0);
    let first = fs::read(out.join("plots/coefficient_plane.svg")).unwrap();
    let curves = fs::read(out.join("plots/curves.svg")).unwrap();
    assert_eq!(code(&run(&["plot", "--run-dir", s(&out)])), 0);
    assert_eq!(first, fs::read(out.join("plots/coefficient_plane.svg")).unwrap());
    assert_eq!(curves, fs::read(out.join("plots/curves.svg")).unwrap());
    let text = String::from_utf8(first).unwrap();
    assert!(text.starts_with("<svg") || text.starts_with("<?xml"));

    assert_eq!(code(&run(&["plot", "--run-dir", s(&dir.path().join("none"))])), 2);
}

#[test]
fn quick_check_passes_and_corrupted_spectrum_fails() {
    let dir = TempDir::new().unwrap();
    let o = run(&["check", "--quick", "--out", s(dir.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report["passed"], true);
    assert!(dir.path().join("check-report.json").exists());

    let mut lambda: Vec<f64> = (1..=16).map(|k| 1.0 / (k * k) as f64).collect();
    lambda[2] = -lambda[2];
    let cfg = write_config(dir.path(), "bad.json", &serde_json::json!({ "covariance": lambda }).to_string());
    let o = run(&["check", "--quick", "--config", &cfg, "--out", s(&dir.path().join("bad"))]);
    assert_eq!(code(&o), 3);
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let failed: Vec<&str> = report["results"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|r| r["passed"] == false)
        .map(|r| r["name"].as_str().unwrap())
        .collect();
    assert!(failed.contains(&"covariance_spec"), "{failed:?}");
}

#[test]
fn sweep_sigma_tabulates_each_cell() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "c.json", TINY);
    let out = dir.path().join("sweep");
    let o = run(&["sweep-sigma", "--config", &cfg, "--out", s(&out), "--sigmas", "0.1,0", "--seeds", "0,1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let table = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(table.lines().count(), 5);
    assert_eq!(String::from_utf8_lossy(&o.stdout), table);

    let o = run(&["sweep-sigma", "--config", &cfg, "--out", s(&out), "--sigmas", ""]);
    assert_eq!(code(&o), 1);
}
