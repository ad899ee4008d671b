use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use tsb_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = tsb_last_error_message();
    assert!(!p.is_null(), "expected an error message");
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_owned()
}

unsafe fn take(s: *mut std::ffi::c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_owned();
    tsb_string_free(s);
    out
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(tsb_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn prior_weights_round_trip() {
    let mut prior = ptr::null_mut();
    let cfg = c(r#"{"app": "Iso", "m_max": [6]}"#);
    unsafe {
        assert_eq!(tsb_prior_new(cfg.as_ptr(), 50, &mut prior), TsbStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(tsb_prior_weights_json(prior, &mut out), TsbStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        let w: Vec<f64> = serde_json::from_value(v["weights"].clone()).unwrap();
        assert_eq!(w.len(), 6);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(w.windows(2).all(|p| p[0] > p[1]));
        tsb_prior_free(prior);
    }
}

#[test]
fn errors_set_status_and_message() {
    let mut prior = ptr::null_mut();
    unsafe {
        assert_eq!(tsb_prior_new(ptr::null(), 10, &mut prior), TsbStatus::NullPointer);
        assert!(last_error().contains("config_json"));

        let bad = c(r#"{"app": "Iso", "colour": 1}"#);
        assert_eq!(tsb_prior_new(bad.as_ptr(), 10, &mut prior), TsbStatus::InvalidConfig);
        assert!(last_error().contains("colour"));

        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(
            tsb_prior_new(invalid.as_ptr().cast(), 10, &mut prior),
            TsbStatus::InvalidUtf8
        );

        let ok = c(r#"{"app": "Iso"}"#);
        assert_eq!(tsb_prior_new(ok.as_ptr(), 10, ptr::null_mut()), TsbStatus::NullPointer);
        assert_eq!(tsb_prior_new(ok.as_ptr(), 10, &mut prior), TsbStatus::Ok);
        assert!(tsb_last_error_message().is_null());
        tsb_prior_free(prior);

        tsb_prior_free(ptr::null_mut());
        tsb_chain_free(ptr::null_mut());
        tsb_string_free(ptr::null_mut());
        assert_eq!(tsb_chain_draws(ptr::null()), 0);
    }
}

const FIT: &str = r#"{
    "prior": {"app": "Iso", "m_max": [5]},
    "sampler": {"n_iter": 3000, "burn_in": 1000, "seed": 3},
    "y": [0.1, -0.2, 0.0, 0.3, 3.9, 4.2, 4.0, 3.8]
}"#;

#[test]
fn fit_returns_a_monotone_posterior_mean() {
    let req = c(FIT);
    let mut chain = ptr::null_mut();
    unsafe {
        assert_eq!(tsb_fit_json(req.as_ptr(), &mut chain), TsbStatus::Ok);
        assert_eq!(tsb_chain_draws(chain), 2000);

        let mut written = 0usize;
        let mut small = [0.0f64; 3];
        assert_eq!(
            tsb_chain_posterior_mean(chain, small.as_mut_ptr(), small.len(), &mut written),
            TsbStatus::BufferTooSmall
        );
        assert_eq!(written, 8);

        let mut fit = [0.0f64; 8];
        assert_eq!(
            tsb_chain_posterior_mean(chain, fit.as_mut_ptr(), fit.len(), &mut written),
            TsbStatus::Ok
        );
        assert!(fit.windows(2).all(|w| w[0] <= w[1]));
        assert!(fit[7] - fit[0] > 3.0);

        let mut out = ptr::null_mut();
        assert_eq!(tsb_chain_summary_json(chain, &mut out), TsbStatus::Ok);
        let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
        assert_eq!(v["draws"], 2000);
        tsb_chain_free(chain);
    }
}

#[test]
fn sampler_initialization_failure_is_a_computation_failure() {
    let req = c(r#"{"experiment": "PoissonReg",
        "prior": {"app": "Iso", "m_max": [2], "level_grid": {"values": [100.0]}},
        "sampler": {"n_iter": 100, "burn_in": 10}, "y": [1, 0, 2, 3]}"#);
    let mut chain = ptr::null_mut();
    unsafe {
        assert_eq!(tsb_fit_json(req.as_ptr(), &mut chain), TsbStatus::ComputationFailed);
    }
    assert!(chain.is_null());
    assert!(last_error().contains("initialization"));
}

#[test]
fn sweep_rejects_short_grids() {
    let cfg = c(r#"{"truth": {"kind": "step", "breaks": [0.5], "levels": [0, 2]},
        "prior": {"app": "Iso"}, "sampler": {"n_iter": 100, "burn_in": 10},
        "n_grid": [10, 20, 40], "replications": 20, "seed": 1}"#);
    let mut out = ptr::null_mut();
    unsafe {
        assert_eq!(tsb_sweep_json(cfg.as_ptr(), &mut out), TsbStatus::InvalidConfig);
    }
    assert!(last_error().contains("insufficient grid"));
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = std::fs::read_to_string(manifest.join("include/tsb.h")).unwrap();
    for f in ["tsb_prior_new", "tsb_fit_json", "tsb_last_error_message", "TSB_STATUS_OK"] {
        assert!(header.contains(f), "header lacks {f}");
    }
    if Command::new("cc").arg("--version").output().is_err() {
        eprintln!("no C compiler; only the header contents were checked");
        return;
    }
    let lib = target_dir().join("libtsb_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "tsb.h"
int main(void) {
    TsbPrior *prior = NULL;
    if (tsb_prior_new("{\"app\": \"Iso\", \"m_max\": [4]}", 20, &prior) != TSB_STATUS_OK) return 1;
    char *json = NULL;
    if (tsb_prior_weights_json(prior, &json) != TSB_STATUS_OK) return 2;
    if (strstr(json, "\"weights\"") == NULL) return 3;
    tsb_string_free(json);
    tsb_prior_free(prior);
    if (tsb_prior_new("{", 20, &prior) != TSB_STATUS_INVALID_CONFIG) return 4;
    if (tsb_last_error_message() == NULL) return 5;
    printf("%s\n", tsb_version());
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("main");
    let out = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .arg("-o")
        .arg(&exe)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let run = Command::new(&exe).output().unwrap();
    assert_eq!(run.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&run.stdout).trim(), env!("CARGO_PKG_VERSION"));
}
