//! C ABI for the solver: opaque handles, integer status codes, and
//! string-based configuration, so any language with a C FFI can drive runs.
//!
//! Conventions:
//! * Handles (`ArpProblem`, `ArpConfig`, `ArpRunResult`) are opaque; free
//!   them with their matching `*_free` function exactly once.
//! * Functions returning [`ArpStatus`] write their product through an out
//!   pointer only on `Ok`.
//! * Strings returned as `*mut c_char` are owned by the caller and must be
//!   released with [`arp_string_free`]. `arp_version` returns a static
//!   string that must not be freed.
//! * On any non-`Ok` status, [`arp_last_error_message`] describes the most
//!   recent failure on the current thread.

use libc::{c_char, c_double, c_int};
use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use arp::config_text::parse_config_text;
use arp::driver::{run, Config, RunResult, Termination};
use arp::error::ArpError;
use arp::problems::{problem_by_name, ExactProblem};
use nalgebra::DVector;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    UnknownProblem = 4,
    InnerSolverFailure = 5,
    RuntimeError = 6,
    Panic = 7,
}

/// Termination states mirrored from the solver.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArpTermination {
    Converged = 0,
    BudgetExhausted = 1,
    InnerFailure = 2,
}

/// Opaque problem handle.
pub struct ArpProblem {
    inner: Box<dyn ExactProblem>,
}

/// Opaque configuration handle.
pub struct ArpConfig {
    inner: Config,
}

/// Opaque run-result handle.
pub struct ArpRunResult {
    inner: RunResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("error message had NUL").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &ArpError) -> ArpStatus {
    match err {
        ArpError::Config(_) => ArpStatus::ConfigError,
        ArpError::UnknownProblem(_) => ArpStatus::UnknownProblem,
        ArpError::InnerSolverFailure { .. } => ArpStatus::InnerSolverFailure,
        _ => ArpStatus::RuntimeError,
    }
}

fn fail(err: ArpError) -> ArpStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, ArpStatus> {
    if ptr.is_null() {
        set_error("null string argument".into());
        return Err(ArpStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8".into());
        ArpStatus::InvalidUtf8
    })
}

/// Most recent error message on this thread, or NULL when none occurred.
/// The caller owns the returned string (free with [`arp_string_free`]).
#[no_mangle]
pub extern "C" fn arp_last_error_message() -> *mut c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(msg) => msg.clone().into_raw(),
        None => ptr::null_mut(),
    })
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` must have been returned by a function in this library (other than
/// `arp_version`) and not freed before.
#[no_mangle]
pub unsafe extern "C" fn arp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Static library version string; do not free.
#[no_mangle]
pub extern "C" fn arp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Creates a problem from its name (e.g. `quartic:10`); `data_path` may be
/// NULL and is only consulted by finite-sum problems.
///
/// # Safety
/// `name` (and `data_path` when non-NULL) must point to NUL-terminated
/// strings; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn arp_problem_new(
    name: *const c_char,
    data_path: *const c_char,
    out: *mut *mut ArpProblem,
) -> ArpStatus {
    if out.is_null() {
        set_error("null out pointer".into());
        return ArpStatus::NullArgument;
    }
    let name = match cstr_arg(name) {
        Ok(s) => s,
        Err(status) => return status,
    };
    let path = if data_path.is_null() {
        None
    } else {
        match cstr_arg(data_path) {
            Ok(s) => Some(PathBuf::from(s)),
            Err(status) => return status,
        }
    };
    match problem_by_name(name, path.as_deref()) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(ArpProblem { inner }));
            ArpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// Problem dimension (0 for NULL).
///
/// # Safety
/// `problem` must be NULL or a live handle from [`arp_problem_new`].
#[no_mangle]
pub unsafe extern "C" fn arp_problem_dim(problem: *const ArpProblem) -> usize {
    if problem.is_null() {
        return 0;
    }
    (*problem).inner.dim()
}

/// # Safety
/// `problem` must come from [`arp_problem_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arp_problem_free(problem: *mut ArpProblem) {
    if !problem.is_null() {
        drop(Box::from_raw(problem));
    }
}

/// Default configuration handle.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn arp_config_default(out: *mut *mut ArpConfig) -> ArpStatus {
    if out.is_null() {
        set_error("null out pointer".into());
        return ArpStatus::NullArgument;
    }
    *out = Box::into_raw(Box::new(ArpConfig {
        inner: Config::default(),
    }));
    ArpStatus::Ok
}

/// Parses a configuration from the same sectioned `key = value` text the
/// CLI accepts (the `[sweep]` section is ignored here).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn arp_config_parse(
    text: *const c_char,
    out: *mut *mut ArpConfig,
) -> ArpStatus {
    if out.is_null() {
        set_error("null out pointer".into());
        return ArpStatus::NullArgument;
    }
    let text = match cstr_arg(text) {
        Ok(s) => s,
        Err(status) => return status,
    };
    match parse_config_text(text) {
        Ok(file) => {
            *out = Box::into_raw(Box::new(ArpConfig { inner: file.config }));
            ArpStatus::Ok
        }
        Err(e) => fail(e),
    }
}

/// # Safety
/// `config` must come from a config constructor and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arp_config_free(config: *mut ArpConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the solver from `x0` (length `x0_len`, which must equal the
/// problem dimension).
///
/// # Safety
/// `problem` and `config` must be live handles; `x0` must point to
/// `x0_len` readable doubles; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn arp_run(
    problem: *const ArpProblem,
    config: *const ArpConfig,
    x0: *const c_double,
    x0_len: usize,
    out: *mut *mut ArpRunResult,
) -> ArpStatus {
    if problem.is_null() || config.is_null() || x0.is_null() || out.is_null() {
        set_error("null argument to arp_run".into());
        return ArpStatus::NullArgument;
    }
    let x0 = std::slice::from_raw_parts(x0, x0_len);
    let start = DVector::from_column_slice(x0);
    let problem = &*problem;
    let config = &*config;
    let outcome = catch_unwind(AssertUnwindSafe(|| {
        run(problem.inner.as_ref(), &start, &config.inner)
    }));
    match outcome {
        Ok(Ok(result)) => {
            *out = Box::into_raw(Box::new(ArpRunResult { inner: result }));
            ArpStatus::Ok
        }
        Ok(Err(e)) => fail(e),
        Err(_) => {
            set_error("solver panicked".into());
            ArpStatus::Panic
        }
    }
}

/// First iteration at which the stopping test held, or −1 when it never
/// did (or for NULL).
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_n_epsilon(result: *const ArpRunResult) -> i64 {
    if result.is_null() {
        return -1;
    }
    (*result)
        .inner
        .n_epsilon
        .map_or(-1, |n| i64::try_from(n).unwrap_or(i64::MAX))
}

/// Number of executed iterations (trace length); 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_iterations(result: *const ArpRunResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.trace.len()
}

/// Termination state as [`ArpTermination`]; −1 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_termination(result: *const ArpRunResult) -> c_int {
    if result.is_null() {
        return -1;
    }
    let t = (*result).inner.termination;
    match t {
        Termination::Converged => ArpTermination::Converged as c_int,
        Termination::BudgetExhausted => ArpTermination::BudgetExhausted as c_int,
        Termination::InnerFailure => ArpTermination::InnerFailure as c_int,
    }
}

/// Dimension of the final point; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_dim(result: *const ArpRunResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.final_point.len()
}

/// Copies the final point into `buf` (capacity `len` ≥ the result
/// dimension).
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn arp_result_final_point(
    result: *const ArpRunResult,
    buf: *mut c_double,
    len: usize,
) -> ArpStatus {
    if result.is_null() || buf.is_null() {
        set_error("null argument to arp_result_final_point".into());
        return ArpStatus::NullArgument;
    }
    let point = &(*result).inner.final_point;
    if len < point.len() {
        set_error(format!(
            "buffer of {len} doubles cannot hold a point of dimension {}",
            point.len()
        ));
        return ArpStatus::RuntimeError;
    }
    let dst = std::slice::from_raw_parts_mut(buf, point.len());
    dst.copy_from_slice(point.as_slice());
    ArpStatus::Ok
}

/// Counted derivative-bundle evaluations; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_deriv_evals(result: *const ArpRunResult) -> u64 {
    if result.is_null() {
        return 0;
    }
    (*result).inner.deriv_evals as u64
}

/// Counted function estimates; 0 for NULL.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_f_evals(result: *const ArpRunResult) -> u64 {
    if result.is_null() {
        return 0;
    }
    (*result).inner.f_evals as u64
}

/// Per-iteration trace as JSON lines; caller frees with
/// [`arp_string_free`]. NULL on failure.
///
/// # Safety
/// `result` must be NULL or a live handle from [`arp_run`].
#[no_mangle]
pub unsafe extern "C" fn arp_result_trace_json(result: *const ArpRunResult) -> *mut c_char {
    if result.is_null() {
        return ptr::null_mut();
    }
    let mut buf = Vec::new();
    let trace = &(*result).inner.trace;
    if arp::driver::write_trace_jsonl(trace, &mut buf).is_err() {
        set_error("trace serialization failed".into());
        return ptr::null_mut();
    }
    match CString::new(buf) {
        Ok(s) => s.into_raw(),
        Err(_) => {
            set_error("trace contained interior NUL".into());
            ptr::null_mut()
        }
    }
}

/// # Safety
/// `result` must come from [`arp_run`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn arp_result_free(result: *mut ArpRunResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    unsafe fn must_problem(name: &str) -> *mut ArpProblem {
        let name = CString::new(name).unwrap();
        let mut p: *mut ArpProblem = ptr::null_mut();
        assert_eq!(
            arp_problem_new(name.as_ptr(), ptr::null(), &mut p),
            ArpStatus::Ok
        );
        p
    }

    #[test]
    fn round_trip_run_through_the_abi() {
        unsafe {
            let problem = must_problem("quadratic:2");
            assert_eq!(arp_problem_dim(problem), 2);

            let text = CString::new("[algorithm]\nepsilon = 1e-3\nseed = 5\n").unwrap();
            let mut config: *mut ArpConfig = ptr::null_mut();
            assert_eq!(arp_config_parse(text.as_ptr(), &mut config), ArpStatus::Ok);

            let x0 = [1.0f64, 1.0];
            let mut result: *mut ArpRunResult = ptr::null_mut();
            assert_eq!(
                arp_run(problem, config, x0.as_ptr(), x0.len(), &mut result),
                ArpStatus::Ok
            );
            assert_eq!(
                arp_result_termination(result),
                ArpTermination::Converged as c_int
            );
            assert!(arp_result_n_epsilon(result) >= 1);
            assert_eq!(arp_result_dim(result), 2);
            let mut buf = [0.0f64; 2];
            assert_eq!(
                arp_result_final_point(result, buf.as_mut_ptr(), buf.len()),
                ArpStatus::Ok
            );
            assert!((buf[0].powi(2) + buf[1].powi(2)).sqrt() <= 1e-3);

            let trace = arp_result_trace_json(result);
            assert!(!trace.is_null());
            let text = CStr::from_ptr(trace).to_str().unwrap();
            assert!(text.lines().count() >= 1);
            assert!(text.lines().next().unwrap().contains("\"sigma\""));
            arp_string_free(trace);

            arp_result_free(result);
            arp_config_free(config);
            arp_problem_free(problem);
        }
    }

    #[test]
    fn errors_set_status_and_message() {
        unsafe {
            let name = CString::new("not-a-problem").unwrap();
            let mut p: *mut ArpProblem = ptr::null_mut();
            assert_eq!(
                arp_problem_new(name.as_ptr(), ptr::null(), &mut p),
                ArpStatus::UnknownProblem
            );
            let msg = arp_last_error_message();
            assert!(!msg.is_null());
            let text = CStr::from_ptr(msg).to_str().unwrap().to_string();
            assert!(text.contains("not-a-problem"));
            arp_string_free(msg);

            let bad = CString::new("[algorithm]\ntheta = 0.9\n").unwrap();
            let mut config: *mut ArpConfig = ptr::null_mut();
            assert_eq!(
                arp_config_parse(bad.as_ptr(), &mut config),
                ArpStatus::ConfigError
            );

            // Dimension mismatch surfaces as a runtime error, not a crash.
            let problem = must_problem("quadratic:2");
            let mut cfg: *mut ArpConfig = ptr::null_mut();
            assert_eq!(arp_config_default(&mut cfg), ArpStatus::Ok);
            let x0 = [0.0f64; 3];
            let mut result: *mut ArpRunResult = ptr::null_mut();
            assert_eq!(
                arp_run(problem, cfg, x0.as_ptr(), x0.len(), &mut result),
                ArpStatus::RuntimeError
            );
            arp_config_free(cfg);
            arp_problem_free(problem);
        }
    }
}
