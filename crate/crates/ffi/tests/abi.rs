use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use twopoint_ffi::*;

fn model(name: &str, params: &[(&str, f64)]) -> *mut TpModel {
    let name = CString::new(name).unwrap();
    let keys: Vec<CString> = params.iter().map(|(k, _)| CString::new(*k).unwrap()).collect();
    let kp: Vec<*const std::ffi::c_char> = keys.iter().map(|k| k.as_ptr()).collect();
    let vals: Vec<f64> = params.iter().map(|(_, v)| *v).collect();
    let mut out = ptr::null_mut();
    let st = unsafe { tp_model_new(name.as_ptr(), kp.as_ptr(), vals.as_ptr(), params.len(), &mut out) };
    assert_eq!(st, TpStatus::Ok);
    out
}

fn last_error() -> String {
    let p = tp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn model_handles_evaluate_coefficients() {
    let m = model("ou", &[("sigma", 1.5)]);
    let (mut d, mut q) = (0, 0);
    let mut b = [0.0];
    let mut s = [0.0];
    unsafe {
        assert_eq!(tp_model_dims(m, &mut d, &mut q), TpStatus::Ok);
        assert_eq!((d, q), (1, 1));
        assert_eq!(tp_model_drift(m, [2.0].as_ptr(), b.as_mut_ptr()), TpStatus::Ok);
        assert_eq!(tp_model_diffusion(m, [2.0].as_ptr(), s.as_mut_ptr()), TpStatus::Ok);
        tp_model_free(m);
    }
    assert_eq!(b[0], -2.0);
    assert_eq!(s[0], 1.5);
}

#[test]
fn errors_carry_codes_and_messages() {
    let name = CString::new("nope").unwrap();
    let mut out = ptr::null_mut();
    let st = unsafe { tp_model_new(name.as_ptr(), ptr::null(), ptr::null(), 0, &mut out) };
    assert_eq!(st, TpStatus::InvalidArgument);
    assert!(out.is_null());
    assert!(last_error().contains("unknown model"));

    let m = model("double_well", &[("sigma", 1.0), ("d", 2.0)]);
    let mut v = 0.0;
    let st = unsafe { tp_nils(m, ptr::null(), [0.3, 0.1].as_ptr(), [0.3, 0.1].as_ptr(), &mut v) };
    assert_eq!(st, TpStatus::InvalidArgument);
    assert!(last_error().contains("diagonal"));
    let st = unsafe { tp_model_drift(ptr::null(), [0.0].as_ptr(), &mut v) };
    assert_eq!(st, TpStatus::NullPointer);
    unsafe { tp_model_free(m) };
}

#[test]
fn nils_matches_the_double_well_closed_form() {
    let m = model("double_well", &[("sigma", 1.0), ("d", 2.0)]);
    let (x, y) = ([0.5, -0.2], [-1.0, 0.7]);
    let mut v = 0.0;
    assert_eq!(unsafe { tp_nils(m, ptr::null(), x.as_ptr(), y.as_ptr(), &mut v) }, TpStatus::Ok);
    let exact = twopoint::model::double_well_nils(&x, &y);
    assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    unsafe { tp_model_free(m) };
}

#[test]
fn poisson_and_study_round_trip() {
    let m = model("ou", &[("sigma", 1.0)]);
    let mut p = ptr::null_mut();
    let (mut nu_f, mut res, mut g1) = (0.0, 0.0, 0.0);
    unsafe {
        assert_eq!(tp_poisson_new(m, 2, -6.0, 6.0, 200, &mut p), TpStatus::Ok);
        assert_eq!(tp_poisson_summary(p, &mut nu_f, &mut res), TpStatus::Ok);
        assert_eq!(tp_poisson_derivative(p, 0.8, 1, &mut g1), TpStatus::Ok);
    }
    // g = -x²/2 for OU (σ = 1), f = x².
    assert!((nu_f - 0.5).abs() < 1e-8);
    assert!(res < 1e-6);
    assert!((g1 + 0.8).abs() < 1e-6);
    let mut s = TpStudySummary::default();
    let st = unsafe { tp_rr_study(m, 2, 0.5, 1, 0.5, 20_000, 8, 1.0, 3, p, &mut s) };
    assert_eq!(st, TpStatus::Ok);
    assert_eq!(s.used_replications, 8);
    assert!((s.predicted_variance - 0.5).abs() < 0.1, "{s:?}");
    unsafe {
        tp_poisson_free(p);
        tp_model_free(m);
    }
}

#[test]
fn coupling_value_of_a_permutation_problem() {
    let cost = [0.0, 3.0, 3.0, 0.0];
    let mut v = 0.0;
    assert_eq!(unsafe { tp_max_coupling_value(cost.as_ptr(), ptr::null(), 2, &mut v) }, TpStatus::Ok);
    assert_eq!(v, 3.0);
}

fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

/// target/<profile>, two levels above the test executable.
fn profile_dir() -> PathBuf {
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_declares_the_abi() {
    let h = std::fs::read_to_string(crate_dir().join("include/twopoint.h")).unwrap();
    for sym in ["tp_model_new", "tp_model_free", "tp_nils", "tp_poisson_new", "tp_rr_study", "tp_last_error", "TP_STATUS_OK"] {
        assert!(h.contains(sym), "{sym}");
    }
}

#[test]
fn c_program_links_against_the_static_library() {
    let lib = profile_dir().join("libtwopoint_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let t = tempfile::tempdir().unwrap();
    let src = t.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <math.h>
#include <stdio.h>
#include "twopoint.h"
int main(void) {
    const char *keys[] = {"sigma"};
    double vals[] = {2.0};
    TpModel *m = NULL;
    if (tp_model_new("ou", keys, vals, 1, &m) != TP_STATUS_OK) return 1;
    double b;
    double x = 1.5;
    if (tp_model_drift(m, &x, &b) != TP_STATUS_OK || b != -1.5) return 2;
    TpModel *bad = NULL;
    if (tp_model_new("missing", NULL, NULL, 0, &bad) != TP_STATUS_INVALID_ARGUMENT) return 3;
    if (tp_last_error() == NULL) return 4;
    tp_model_free(m);
    printf("%s\n", tp_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = t.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success());
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status.code());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
