//! C ABI over `ssm-pnc`.
//!
//! Every entry point returns an [`SsmStatus`]; on failure a message is kept
//! per thread and can be copied out with [`ssm_last_error_message`]. Series
//! and fit results are opaque handles released by their `_free` functions.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use ssm_pnc::em::rate_location;
use ssm_pnc::model::simulate;
use ssm_pnc::workparam::w_opt_location;
use ssm_pnc::{
    algorithm1, algorithm2, algorithm3, default_init, log_likelihood, Error, FitOptions, FitReport, ModelParams, Scheme,
    TimeSeries,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    LengthMismatch = 3,
    NotPositiveDefinite = 4,
    NoRoot = 5,
    DegenerateScale = 6,
    Numerical = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SsmScheme {
    Centered = 0,
    Noncentered = 1,
    Partial = 2,
    Approx = 3,
}

fn scheme_from(code: c_int) -> Result<Scheme, Failure> {
    match code {
        c if c == SsmScheme::Centered as c_int => Ok(Scheme::Centered),
        c if c == SsmScheme::Noncentered as c_int => Ok(Scheme::Noncentered),
        c if c == SsmScheme::Partial as c_int => Ok(Scheme::Partial),
        c if c == SsmScheme::Approx as c_int => Ok(Scheme::Approx),
        other => Err(Failure::new(SsmStatus::InvalidArgument, format!("unknown scheme code {other}"))),
    }
}

/// Model parameters `(μ, σ_η², σ_ε², φ)`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsmParams {
    pub mu: f64,
    pub sigma_eta_sq: f64,
    pub sigma_eps_sq: f64,
    pub phi: f64,
}

impl From<ModelParams> for SsmParams {
    fn from(p: ModelParams) -> Self {
        Self { mu: p.mu, sigma_eta_sq: p.sigma_eta_sq, sigma_eps_sq: p.sigma_eps_sq, phi: p.phi }
    }
}

/// An observed series.
pub struct SsmSeries(TimeSeries);

/// The outcome of one EM fit.
pub struct SsmFit(FitReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure {
    status: SsmStatus,
    message: String,
}

impl Failure {
    fn new(status: SsmStatus, message: impl Into<String>) -> Self {
        Self { status, message: message.into() }
    }

    fn null(what: &str) -> Self {
        Self::new(SsmStatus::NullPointer, format!("{what} is null"))
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::InvalidParameter(_) | Error::IndexOutOfRange { .. } | Error::ZeroPhi | Error::Config(_) => {
                SsmStatus::InvalidArgument
            }
            Error::LengthMismatch { .. } => SsmStatus::LengthMismatch,
            Error::NotPositiveDefinite { .. } => SsmStatus::NotPositiveDefinite,
            Error::NoRoot(_) => SsmStatus::NoRoot,
            Error::DegenerateScale(_) => SsmStatus::DegenerateScale,
            _ => SsmStatus::Numerical,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> SsmStatus {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => SsmStatus::Ok,
        Ok(Err(f)) => {
            set_last_error(f.message);
            f.status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal panic: {msg}"));
            SsmStatus::Panic
        }
    }
}

unsafe fn params_from(p: *const SsmParams) -> Result<ModelParams, Failure> {
    let p = p.as_ref().ok_or_else(|| Failure::null("params"))?;
    Ok(ModelParams::new(p.mu, p.sigma_eta_sq, p.sigma_eps_sq, p.phi)?)
}

unsafe fn series_ref<'a>(s: *const SsmSeries) -> Result<&'a TimeSeries, Failure> {
    s.as_ref().map(|s| &s.0).ok_or_else(|| Failure::null("series"))
}

unsafe fn slice_from<'a>(data: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if data.is_null() {
        return Err(Failure::null(what));
    }
    Ok(std::slice::from_raw_parts(data, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(what));
    }
    out.write(value);
    Ok(())
}

fn fit_options(tol: f64, max_iter: usize) -> Result<FitOptions, Failure> {
    if !(tol > 0.0) || max_iter == 0 {
        return Err(Failure::new(SsmStatus::InvalidArgument, "tol must be positive and max_iter at least 1"));
    }
    Ok(FitOptions { tol, max_iter })
}

unsafe fn store_fit(out: *mut *mut SsmFit, report: FitReport) -> Result<(), Failure> {
    write_out(out, Box::into_raw(Box::new(SsmFit(report))), "out")
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn ssm_status_string(status: SsmStatus) -> *const c_char {
    let s: &'static [u8] = match status {
        SsmStatus::Ok => b"ok\0",
        SsmStatus::NullPointer => b"null pointer\0",
        SsmStatus::InvalidArgument => b"invalid argument\0",
        SsmStatus::LengthMismatch => b"length mismatch\0",
        SsmStatus::NotPositiveDefinite => b"matrix not positive definite\0",
        SsmStatus::NoRoot => b"no admissible root\0",
        SsmStatus::DegenerateScale => b"degenerate scale working parameter\0",
        SsmStatus::Numerical => b"numerical failure\0",
        SsmStatus::Panic => b"internal panic\0",
    };
    s.as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated,
/// always NUL-terminated when `len > 0`) and returns the length the full
/// message needs including the terminator; 0 when there is no error.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn ssm_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let slot = slot.borrow();
        let Some(msg) = slot.as_ref() else { return 0 };
        let bytes = msg.as_bytes_with_nul();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n - 1) = 0;
        }
        bytes.len()
    })
}

/// Copies `len` observations into a new series.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_series_new(values: *const f64, len: usize, out: *mut *mut SsmSeries) -> SsmStatus {
    guard(|| {
        let y = TimeSeries::new(slice_from(values, len, "values")?.to_vec())?;
        write_out(out, Box::into_raw(Box::new(SsmSeries(y))), "out")
    })
}

/// Simulates `n` observations from the stationary model with a ChaCha8
/// stream seeded by `seed`.
///
/// # Safety
/// `params` must point to a valid [`SsmParams`]; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_series_simulate(
    params: *const SsmParams,
    n: usize,
    seed: u64,
    out: *mut *mut SsmSeries,
) -> SsmStatus {
    guard(|| {
        let y = simulate(&params_from(params)?, n, seed)?;
        write_out(out, Box::into_raw(Box::new(SsmSeries(y))), "out")
    })
}

/// Number of observations; 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_series_len(series: *const SsmSeries) -> usize {
    series.as_ref().map_or(0, |s| s.0.len())
}

/// Copies the observations into `out`, which must hold exactly `len` values.
///
/// # Safety
/// `series` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ssm_series_copy_values(series: *const SsmSeries, out: *mut f64, len: usize) -> SsmStatus {
    guard(|| {
        let y = series_ref(series)?;
        if len != y.len() {
            return Err(Error::LengthMismatch { expected: y.len(), got: len }.into());
        }
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        ptr::copy_nonoverlapping(y.values().as_ptr(), out, len);
        Ok(())
    })
}

/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_series_free(series: *mut SsmSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Exact Gaussian log-likelihood of the series under `params`.
///
/// # Safety
/// Pointers must be valid; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_log_likelihood(
    params: *const SsmParams,
    series: *const SsmSeries,
    out: *mut f64,
) -> SsmStatus {
    guard(|| {
        let ll = log_likelihood(&params_from(params)?, series_ref(series)?)?;
        write_out(out, ll, "out")
    })
}

/// Optimal location weights for a series of length `n`, written to `out_w`.
///
/// # Safety
/// `params` must be valid and `out_w` must point to `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ssm_w_opt_location(params: *const SsmParams, n: usize, out_w: *mut f64) -> SsmStatus {
    guard(|| {
        let w = w_opt_location(&params_from(params)?, n)?;
        if out_w.is_null() {
            return Err(Failure::null("out_w"));
        }
        ptr::copy_nonoverlapping(w.as_ptr(), out_w, n);
        Ok(())
    })
}

/// Convergence rate of the location EM for weights `w` of length `n`.
///
/// # Safety
/// `params` must be valid, `w` must point to `n` readable doubles and
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_rate_location(
    params: *const SsmParams,
    w: *const f64,
    n: usize,
    out: *mut f64,
) -> SsmStatus {
    guard(|| {
        let r = rate_location(&params_from(params)?, slice_from(w, n, "w")?)?;
        write_out(out, r, "out")
    })
}

/// EM for μ with the other parameters fixed at `known`; `scheme` is an
/// [`SsmScheme`] value.
///
/// # Safety
/// Pointers must be valid; `out` receives a handle to free with [`ssm_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_location(
    series: *const SsmSeries,
    init_mu: f64,
    known: *const SsmParams,
    scheme: c_int,
    tol: f64,
    max_iter: usize,
    out: *mut *mut SsmFit,
) -> SsmStatus {
    guard(|| {
        let report = algorithm1(series_ref(series)?, init_mu, &params_from(known)?, scheme_from(scheme)?, fit_options(tol, max_iter)?)?;
        store_fit(out, report)
    })
}

/// EM for σ_η² with the other parameters fixed at `known`; `scheme` is an
/// [`SsmScheme`] value.
///
/// # Safety
/// Pointers must be valid; `out` receives a handle to free with [`ssm_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_scale(
    series: *const SsmSeries,
    init_sigma_eta_sq: f64,
    known: *const SsmParams,
    scheme: c_int,
    tol: f64,
    max_iter: usize,
    out: *mut *mut SsmFit,
) -> SsmStatus {
    guard(|| {
        let report =
            algorithm2(series_ref(series)?, init_sigma_eta_sq, &params_from(known)?, scheme_from(scheme)?, fit_options(tol, max_iter)?)?;
        store_fit(out, report)
    })
}

/// Three-cycle ECM for all parameters; `cycle2` and `scale` are
/// [`SsmScheme`] values. A null `init` starts from the moment-based default.
///
/// # Safety
/// `series` must be live, `init` null or valid; `out` receives a handle to
/// free with [`ssm_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_all(
    series: *const SsmSeries,
    init: *const SsmParams,
    cycle2: c_int,
    scale: c_int,
    tol: f64,
    max_iter: usize,
    out: *mut *mut SsmFit,
) -> SsmStatus {
    guard(|| {
        let y = series_ref(series)?;
        let start = if init.is_null() { default_init(y) } else { params_from(init)? };
        let report = algorithm3(y, &start, scheme_from(cycle2)?, scheme_from(scale)?, fit_options(tol, max_iter)?)?;
        store_fit(out, report)
    })
}

/// Final parameter estimates.
///
/// # Safety
/// `fit` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_params(fit: *const SsmFit, out: *mut SsmParams) -> SsmStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| Failure::null("fit"))?;
        write_out(out, fit.0.final_params.into(), "out")
    })
}

/// Iterations performed; 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_iterations(fit: *const SsmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.iterations)
}

/// Final log-likelihood; NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_loglik(fit: *const SsmFit) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.final_loglik())
}

/// Whether the tolerance rule, rather than the iteration cap, stopped the fit.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_converged(fit: *const SsmFit) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged())
}

/// Length of the log-likelihood trajectory, starting point included.
///
/// # Safety
/// `fit` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_trajectory_len(fit: *const SsmFit) -> usize {
    fit.as_ref().map_or(0, |f| f.0.trajectory.len())
}

/// Copies the log-likelihood trajectory; `len` must equal
/// [`ssm_fit_trajectory_len`].
///
/// # Safety
/// `fit` must be a live handle and `out` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_copy_logliks(fit: *const SsmFit, out: *mut f64, len: usize) -> SsmStatus {
    guard(|| {
        let fit = fit.as_ref().ok_or_else(|| Failure::null("fit"))?;
        let traj = &fit.0.trajectory;
        if len != traj.len() {
            return Err(Error::LengthMismatch { expected: traj.len(), got: len }.into());
        }
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        for (k, step) in traj.iter().enumerate() {
            out.add(k).write(step.loglik);
        }
        Ok(())
    })
}

/// # Safety
/// `fit` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ssm_fit_free(fit: *mut SsmFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
