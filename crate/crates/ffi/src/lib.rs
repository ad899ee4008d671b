//! C ABI for the `tsb` library.
//!
//! Objects cross the boundary as opaque handles created by `tsb_*_new` or
//! `tsb_fit_json` and released by the matching `*_free`. Every fallible call
//! returns a [`TsbStatus`]; on failure a description is available from
//! [`tsb_last_error_message`] on the same thread. Strings returned through
//! out-parameters are owned by the caller and released with
//! [`tsb_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use serde::Deserialize;
use tsb::analysis::{run_sweep, SweepConfig};
use tsb::experiments::{Dataset, Design, ExperimentKind, ExperimentSpec, Observations};
use tsb::priors::{model_weights, PriorConfig, TwoStepPrior};
use tsb::samplers::{posterior_mean, run_rjmcmc, Chain, SamplerConfig};

/// Result of a C API call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidConfig = 3,
    ComputationFailed = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// Prior built for a fixed design size.
pub struct TsbPrior {
    prior: TwoStepPrior,
    n: usize,
}

/// Finished chain together with the experiment it was run on.
pub struct TsbChain {
    chain: Chain,
    exp: ExperimentSpec,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &tsb::Error) -> TsbStatus {
    match tsb::cli::exit_code(e) {
        tsb::cli::EXIT_FAIL => TsbStatus::ComputationFailed,
        _ => TsbStatus::InvalidConfig,
    }
}

/// Run `f`, recording errors and converting panics into [`TsbStatus::Panic`].
fn guard(f: impl FnOnce() -> Result<(), TsbStatus>) -> TsbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TsbStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TsbStatus::Panic
        }
    }
}

fn fail(e: tsb::Error) -> TsbStatus {
    set_error(e.to_string());
    status_of(&e)
}

fn null(what: &str) -> TsbStatus {
    set_error(format!("{what} is null"));
    TsbStatus::NullPointer
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TsbStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|e| {
        set_error(format!("{what} is not UTF-8: {e}"));
        TsbStatus::InvalidUtf8
    })
}

fn parse<T: for<'de> Deserialize<'de>>(text: &str) -> Result<T, TsbStatus> {
    serde_json::from_str(text).map_err(|e| {
        set_error(format!("invalid JSON: {e}"));
        TsbStatus::InvalidConfig
    })
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), TsbStatus> {
    let c = CString::new(s).map_err(|_| {
        set_error("output contains a NUL byte");
        TsbStatus::ComputationFailed
    })?;
    *out = c.into_raw();
    Ok(())
}

fn to_json<T: serde::Serialize>(v: &T) -> Result<String, TsbStatus> {
    serde_json::to_string(v).map_err(|e| {
        set_error(e.to_string());
        TsbStatus::ComputationFailed
    })
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn tsb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tsb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsb_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a prior from its JSON configuration for design size `n`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_prior_new(
    config_json: *const c_char,
    n: usize,
    out: *mut *mut TsbPrior,
) -> TsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: PriorConfig = parse(read_str(config_json, "config_json")?)?;
        let prior = cfg.build(n).map_err(fail)?;
        *out = Box::into_raw(Box::new(TsbPrior { prior, n }));
        Ok(())
    })
}

/// # Safety
/// `prior` must come from [`tsb_prior_new`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsb_prior_free(prior: *mut TsbPrior) {
    if !prior.is_null() {
        drop(Box::from_raw(prior));
    }
}

/// Model-index weights as JSON: `{n, indices, n_delta_sq, log_weights, weights}`.
///
/// # Safety
/// `prior` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_prior_weights_json(
    prior: *const TsbPrior,
    out: *mut *mut c_char,
) -> TsbStatus {
    guard(|| {
        let p = prior.as_ref().ok_or_else(|| null("prior"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let table = model_weights(&p.prior, p.n).map_err(fail)?;
        put_string(out, to_json(&table)?)
    })
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FitRequest {
    #[serde(default = "gaussian")]
    experiment: ExperimentKind,
    /// Defaults to the index design of the response length.
    #[serde(default)]
    design: Option<Design>,
    prior: PriorConfig,
    sampler: SamplerConfig,
    y: Vec<f64>,
}

fn gaussian() -> ExperimentKind {
    ExperimentKind::GaussianReg
}

/// Run the sampler on a regression dataset described by `request_json`:
/// `{experiment, design?, prior, sampler, y}`.
///
/// # Safety
/// `request_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_fit_json(
    request_json: *const c_char,
    out: *mut *mut TsbChain,
) -> TsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let req: FitRequest = parse(read_str(request_json, "request_json")?)?;
        let n = req.y.len();
        let design = req.design.unwrap_or(Design::Index { n });
        let exp = ExperimentSpec::new(req.experiment, design);
        let data = Dataset::new(req.experiment, req.sampler.seed, Observations::Scalar(req.y));
        let prior = req.prior.build(n).map_err(fail)?;
        let chain = run_rjmcmc(prior.rate.app, &exp, &data, &prior, &req.sampler).map_err(fail)?;
        *out = Box::into_raw(Box::new(TsbChain { chain, exp }));
        Ok(())
    })
}

/// # Safety
/// `chain` must come from [`tsb_fit_json`] and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn tsb_chain_free(chain: *mut TsbChain) {
    if !chain.is_null() {
        drop(Box::from_raw(chain));
    }
}

/// Number of retained draws, or 0 for a null handle.
///
/// # Safety
/// `chain` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tsb_chain_draws(chain: *const TsbChain) -> usize {
    chain.as_ref().map_or(0, |c| c.chain.draws.len())
}

/// Write the posterior-mean fit into `buf`, which holds `len` values.
/// `written` receives the number of fitted values, also when the buffer is
/// too small.
///
/// # Safety
/// `chain` must be a live handle, `buf` valid for `len` writes and
/// `written` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_chain_posterior_mean(
    chain: *const TsbChain,
    buf: *mut f64,
    len: usize,
    written: *mut usize,
) -> TsbStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if written.is_null() {
            return Err(null("written"));
        }
        let fit = posterior_mean(&c.chain, &c.exp).map_err(fail)?;
        *written = fit.len();
        if fit.len() > len {
            set_error(format!("buffer holds {len} values, {} needed", fit.len()));
            return Err(TsbStatus::BufferTooSmall);
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        std::slice::from_raw_parts_mut(buf, fit.len()).copy_from_slice(&fit);
        Ok(())
    })
}

/// Chain summary as JSON: model-index histogram, acceptance rates and the
/// truncation warning.
///
/// # Safety
/// `chain` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_chain_summary_json(
    chain: *const TsbChain,
    out: *mut *mut c_char,
) -> TsbStatus {
    guard(|| {
        let c = chain.as_ref().ok_or_else(|| null("chain"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let hist: std::collections::BTreeMap<String, usize> = c
            .chain
            .index_histogram()
            .into_iter()
            .map(|(m, k)| (m.to_string(), k))
            .collect();
        let rates: std::collections::BTreeMap<String, f64> = c
            .chain
            .acceptance_rates()
            .into_iter()
            .map(|(k, v)| (format!("{k:?}"), v))
            .collect();
        let v = serde_json::json!({
            "draws": c.chain.draws.len(),
            "histogram": hist,
            "acceptance": rates,
            "truncation_warning": c.chain.truncation_warning,
        });
        put_string(out, to_json(&v)?)
    })
}

/// Run a rate sweep from its JSON configuration and return the contraction
/// report as JSON.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn tsb_sweep_json(
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> TsbStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg: SweepConfig = parse(read_str(config_json, "config_json")?)?;
        let report = run_sweep(&cfg, &|_| {}).map_err(fail)?;
        put_string(out, to_json(&report)?)
    })
}
