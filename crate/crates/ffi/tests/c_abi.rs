use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use hilbert_ot_ffi::*;

fn last_error() -> String {
    let p = hot_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn sigma_schedule_values() {
    let mut s = f64::NAN;
    for (epoch, want) in [(0, 0.5), (2000, 0.28), (4000, 0.06), (4999, 0.06)] {
        let st = unsafe { hot_sigma_at(0.5, 0.06, 5000, 0.8, epoch, &mut s) };
        assert_eq!(st, HotStatus::Ok);
        assert!((s - want).abs() < 1e-12, "epoch {epoch}: {s}");
    }
    let st = unsafe { hot_sigma_at(0.1, 0.5, 5000, 0.8, 0, &mut s) };
    assert_ne!(st, HotStatus::Ok);
    assert!(!last_error().is_empty());
    assert_eq!(unsafe { hot_sigma_at(0.5, 0.06, 10, 0.8, 0, ptr::null_mut()) }, HotStatus::NullPointer);
}

#[test]
fn generate_and_estimate_perpendicular_cost() {
    let (n, k) = (1000, 16);
    let mut src = vec![0.0; n * k];
    let mut tgt = vec![0.0; n * k];
    let st = unsafe { hot_generate(HotDataset::Perpendicular, n, k, 7, src.as_mut_ptr(), tgt.as_mut_ptr()) };
    assert_eq!(st, HotStatus::Ok);
    assert!(src.chunks(k).all(|r| r[3] == 0.0));
    assert!(tgt.chunks(k).all(|r| r[1] == 0.0));
    let mut w = 0.0;
    let st = unsafe { hot_empirical_w2sq(src.as_ptr(), tgt.as_ptr(), n, k, &mut w) };
    assert_eq!(st, HotStatus::Ok);
    assert!((w - 2.0 / 3.0).abs() < 0.05 * 2.0 / 3.0, "{w}");

    let st = unsafe { hot_generate(HotDataset::Parallel, 4, 3, 7, src.as_mut_ptr(), tgt.as_mut_ptr()) };
    assert_eq!(st, HotStatus::InvalidArgument);
    assert!(last_error().contains("K >= 4"), "{}", last_error());
}

#[test]
fn assignment_tie_break_and_errors() {
    let cost = [1.0, 1.0, 1.0, 1.0];
    let mut perm = [9usize; 2];
    let mut total = 0.0;
    assert_eq!(unsafe { hot_solve_assignment(cost.as_ptr(), 2, perm.as_mut_ptr(), &mut total) }, HotStatus::Ok);
    assert_eq!(perm, [0, 1]);
    assert_eq!(total, 2.0);

    let cycle = [1.0, 0.0, 1.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0];
    let mut perm = [0usize; 3];
    assert_eq!(unsafe { hot_solve_assignment(cycle.as_ptr(), 3, perm.as_mut_ptr(), &mut total) }, HotStatus::Ok);
    assert_eq!(perm, [1, 2, 0]);
    assert_eq!(total, 0.0);

    let bad = [f64::NAN, 0.0, 0.0, 0.0];
    assert_ne!(unsafe { hot_solve_assignment(bad.as_ptr(), 2, perm.as_mut_ptr(), &mut total) }, HotStatus::Ok);
    assert_eq!(unsafe { hot_solve_assignment(ptr::null(), 2, perm.as_mut_ptr(), &mut total) }, HotStatus::NullPointer);
}

fn train_small(json: &str) -> (*mut HotTransport, HotMetrics) {
    let cfg = CString::new(json).unwrap();
    let mut h = ptr::null_mut();
    let mut m = HotMetrics::default();
    let st = unsafe { hot_train(cfg.as_ptr(), &mut h, &mut m) };
    assert_eq!(st, HotStatus::Ok, "{}", last_error());
    assert!(!h.is_null());
    (h, m)
}

const SMALL: &str = r#"{"dataset": "parallel", "basis": {"kind": "fourier", "num_modes": 4},
  "trainer": {"epochs": 3, "batch_size": 16, "probe_every": 0}, "network": {"hidden": [8]},
  "eval": {"n": 32}}"#;

#[test]
fn train_apply_evaluate_and_free() {
    let (h, m) = train_small(SMALL);
    assert_eq!(m.n, 32);
    assert!(m.d_target.is_finite() && (m.d_cost - (m.w2sq_mu_nu - m.mean_transport_cost).abs()).abs() < 1e-15);
    assert_eq!(unsafe { hot_transport_num_modes(h) }, 4);

    let x = [0.1, 0.2, 0.3, 0.4, -0.5, 0.0, 0.5, 1.0];
    let mut y = [0.0; 8];
    assert_eq!(unsafe { hot_transport_apply(h, x.as_ptr(), 2, 4, y.as_mut_ptr()) }, HotStatus::Ok);
    assert!(y.iter().all(|v| v.is_finite()));
    assert_eq!(unsafe { hot_transport_apply(h, x.as_ptr(), 2, 3, y.as_mut_ptr()) }, HotStatus::ShapeMismatch);

    let cfg = CString::new(SMALL).unwrap();
    let mut again = HotMetrics::default();
    assert_eq!(unsafe { hot_evaluate(h, cfg.as_ptr(), &mut again) }, HotStatus::Ok);
    assert_eq!(again, m);

    let other = CString::new(r#"{"basis": {"kind": "fourier", "num_modes": 8}}"#).unwrap();
    assert_eq!(unsafe { hot_evaluate(h, other.as_ptr(), &mut again) }, HotStatus::BasisMismatch);

    let (h2, m2) = train_small(SMALL);
    assert_eq!(m, m2);
    unsafe {
        hot_transport_free(h);
        hot_transport_free(h2);
        hot_transport_free(ptr::null_mut());
    }
}

#[test]
fn zero_epochs_reports_nan_metrics() {
    let (h, m) = train_small(r#"{"trainer": {"epochs": 0}}"#);
    assert!(m.d_target.is_nan() && m.n == 0);
    assert_eq!(unsafe { hot_transport_num_modes(h) }, 16);
    unsafe { hot_transport_free(h) };
}

#[test]
fn bad_config_is_reported() {
    let cfg = CString::new(r#"{"trainer": {"epoch": 3}}"#).unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hot_train(cfg.as_ptr(), &mut h, ptr::null_mut()) }, HotStatus::Config);
    assert!(h.is_null());
    assert!(last_error().contains("epoch"));
    hot_clear_error();
    assert!(hot_last_error_message().is_null());
}

#[test]
fn load_missing_checkpoint() {
    let p = CString::new("/nonexistent/transport.json").unwrap();
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hot_transport_load(p.as_ptr(), &mut h) }, HotStatus::MissingArtifact);
    assert!(h.is_null());
    assert_eq!(unsafe { hot_transport_num_modes(ptr::null()) }, 0);
}

#[test]
fn version_string() {
    let v = unsafe { CStr::from_ptr(hot_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

fn header() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include/hilbert_ot.h")
}

#[test]
fn header_declares_every_export() {
    let text = std::fs::read_to_string(header()).unwrap();
    for sym in [
        "hot_version",
        "hot_last_error_message",
        "hot_clear_error",
        "hot_sigma_at",
        "hot_generate",
        "hot_empirical_w2sq",
        "hot_solve_assignment",
        "hot_transport_load",
        "hot_transport_num_modes",
        "hot_transport_apply",
        "hot_transport_free",
        "hot_train",
        "hot_evaluate",
        "typedef struct HotTransport HotTransport",
        "HOT_STATUS_OK = 0",
    ] {
        assert!(text.contains(sym), "{sym} missing from header");
    }
}

fn have_cc() -> bool {
    Command::new("cc").arg("--version").output().is_ok_and(|o| o.status.success())
}

#[test]
fn header_compiles_as_c99() {
    if !have_cc() {
        eprintln!("cc not found; skipping header compile check");
        return;
    }
    let out = Command::new("cc")
        .args(["-fsyntax-only", "-std=c99", "-Wall", "-Wextra", "-pedantic", "-Werror", "-x", "c"])
        .arg(header())
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}

/// Directory holding the built cdylib (`target/<profile>`).
fn lib_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().and_then(Path::parent).unwrap().to_path_buf()
}

#[test]
fn c_program_links_and_runs() {
    if !have_cc() {
        eprintln!("cc not found; skipping C link test");
        return;
    }
    let libdir = lib_dir();
    assert!(
        libdir.join("libhilbert_ot_ffi.so").exists() || libdir.join("libhilbert_ot_ffi.dylib").exists(),
        "cdylib not found in {}",
        libdir.display()
    );
    let dir = tempfile::TempDir::new().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "hilbert_ot.h"
int main(void) {
    double s = 0.0, w = -1.0, a[8], b[8];
    if (hot_sigma_at(0.5, 0.06, 5000, 0.8, 2000, &s) != HOT_STATUS_OK) return 1;
    if (hot_generate(HOT_DATASET_PARALLEL, 2, 4, 3, a, b) != HOT_STATUS_OK) return 2;
    if (hot_empirical_w2sq(a, a, 2, 4, &w) != HOT_STATUS_OK || w != 0.0) return 3;
    if (hot_generate(HOT_DATASET_PARALLEL, 2, 2, 3, a, b) != HOT_STATUS_INVALID_ARGUMENT) return 4;
    if (hot_last_error_message() == NULL) return 5;
    printf("%.6f\n", s);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header().parent().unwrap())
        .arg("-L")
        .arg(&libdir)
        .args(["-lhilbert_ot_ffi", "-o"])
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).env("LD_LIBRARY_PATH", &libdir).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), "0.280000");
}
