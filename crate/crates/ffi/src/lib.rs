//! C ABI over `krein-core`.
//!
//! Scenarios and runs are opaque heap handles owned by the caller and released
//! with the matching `*_free` function. Every fallible call returns a
//! [`KreinStatus`]; the message of the last error on the calling thread is
//! available from [`krein_last_error`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use krein_core::config::{preset, ScenarioConfig};
use krein_core::driver::{self, EigenSource, ReportStatus, ScenarioRun};
use krein_core::krein::Signature;
use krein_core::pencil::map_z;
use krein_core::{Complex64, KreinError};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KreinStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Numerical = 4,
    Io = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Verdict attached to a spectrum report.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KreinVerdict {
    Passed = 0,
    Flagged = 1,
    Failed = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KreinCounts {
    pub k_ham: usize,
    pub k_r: usize,
    pub k_c: usize,
    pub k_i_minus: usize,
    /// 1 when `k_r + 2k_c + 2k_i^-` matches the index prediction.
    pub identity_holds: i32,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct KreinEigenvalue {
    pub lambda_re: f64,
    pub lambda_im: f64,
    pub z_re: f64,
    pub z_im: f64,
    pub multiplicity: usize,
    /// 0 Krein zero, 1 removable pole, 2 direct oracle.
    pub source: i32,
    /// +1 positive, -1 negative, 0 not applicable or near-degenerate.
    pub signature: i32,
}

/// Opaque scenario configuration.
pub struct KreinScenario {
    config: ScenarioConfig,
}

/// Opaque result of a scenario run (one report per chemical potential).
pub struct KreinRun {
    run: ScenarioRun,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &KreinError) -> KreinStatus {
    match e.root() {
        KreinError::Config(_) | KreinError::InvalidArgument(_) | KreinError::InvalidGrid(_) | KreinError::Parse(_) => {
            KreinStatus::Config
        }
        KreinError::Io(_) | KreinError::Json(_) => KreinStatus::Io,
        _ => KreinStatus::Numerical,
    }
}

/// Run `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (KreinStatus, String)>) -> KreinStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KreinStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            KreinStatus::Panic
        }
    }
}

fn core_err(e: KreinError) -> (KreinStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, (KreinStatus, String)> {
    if p.is_null() {
        return Err((KreinStatus::NullPointer, "null string argument".into()));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| (KreinStatus::InvalidUtf8, format!("argument is not UTF-8: {e}")))
}

unsafe fn out_arg<'a, T>(p: *mut T) -> Result<&'a mut T, (KreinStatus, String)> {
    p.as_mut().ok_or((KreinStatus::NullPointer, "null output pointer".into()))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, (KreinStatus, String)> {
    p.as_ref().ok_or((KreinStatus::NullPointer, "null handle".into()))
}

/// Message of the last failed call on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn krein_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn krein_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Load a shipped preset by name.
///
/// # Safety
/// `name` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_from_preset(name: *const c_char, out: *mut *mut KreinScenario) -> KreinStatus {
    guard(|| {
        let out = out_arg(out)?;
        let config = preset(str_arg(name)?).map_err(core_err)?;
        *out = Box::into_raw(Box::new(KreinScenario { config }));
        Ok(())
    })
}

/// Parse a scenario from TOML text.
///
/// # Safety
/// `toml` must be a valid NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_from_toml(toml: *const c_char, out: *mut *mut KreinScenario) -> KreinStatus {
    guard(|| {
        let out = out_arg(out)?;
        let config = ScenarioConfig::from_toml(str_arg(toml)?).map_err(core_err)?;
        *out = Box::into_raw(Box::new(KreinScenario { config }));
        Ok(())
    })
}

/// Release a scenario; null is ignored.
///
/// # Safety
/// `scenario` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_free(scenario: *mut KreinScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

fn revalidate(s: &mut KreinScenario, old: ScenarioConfig) -> Result<(), (KreinStatus, String)> {
    if let Err(e) = s.config.validate() {
        s.config = old;
        return Err(core_err(e));
    }
    Ok(())
}

/// Replace the chemical potential (and drop any range).
///
/// # Safety
/// `scenario` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_set_mu(scenario: *mut KreinScenario, mu: f64) -> KreinStatus {
    guard(|| {
        let s = out_arg(scenario)?;
        let old = s.config.clone();
        s.config.mu = Some(mu);
        s.config.mu_range = None;
        revalidate(s, old)
    })
}

/// Set the output directory.
///
/// # Safety
/// `scenario` must be a valid handle and `dir` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_set_output(scenario: *mut KreinScenario, dir: *const c_char) -> KreinStatus {
    guard(|| {
        let s = out_arg(scenario)?;
        s.config.output = PathBuf::from(str_arg(dir)?);
        Ok(())
    })
}

/// Enable (nonzero) or disable the direct-spectrum cross-check.
///
/// # Safety
/// `scenario` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn krein_scenario_set_oracle(scenario: *mut KreinScenario, enabled: i32) -> KreinStatus {
    guard(|| {
        out_arg(scenario)?.config.oracle.enabled = enabled != 0;
        Ok(())
    })
}

/// Run the scenario end to end, writing artifacts under its output directory.
///
/// # Safety
/// `scenario` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_run_spectrum(scenario: *const KreinScenario, out: *mut *mut KreinRun) -> KreinStatus {
    guard(|| {
        let out = out_arg(out)?;
        let s = handle(scenario)?;
        let run = driver::run_scenario(&s.config).map_err(core_err)?;
        *out = Box::into_raw(Box::new(KreinRun { run }));
        Ok(())
    })
}

/// Release a run; null is ignored.
///
/// # Safety
/// `run` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn krein_run_free(run: *mut KreinRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Number of reports in a run.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_run_report_count(run: *const KreinRun, out: *mut usize) -> KreinStatus {
    guard(|| {
        *out_arg(out)? = handle(run)?.run.reports.len();
        Ok(())
    })
}

fn verdict(s: ReportStatus) -> KreinVerdict {
    match s {
        ReportStatus::Passed => KreinVerdict::Passed,
        ReportStatus::Flagged => KreinVerdict::Flagged,
        ReportStatus::Failed => KreinVerdict::Failed,
    }
}

/// Worst verdict over the run.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_run_verdict(run: *const KreinRun, out: *mut KreinVerdict) -> KreinStatus {
    guard(|| {
        *out_arg(out)? = verdict(handle(run)?.run.status);
        Ok(())
    })
}

fn report_at(run: &KreinRun, index: usize) -> Result<&driver::SpectrumReport, (KreinStatus, String)> {
    run.run
        .reports
        .get(index)
        .ok_or((KreinStatus::OutOfRange, format!("report {index} of {}", run.run.reports.len())))
}

/// Chemical potential of report `index`.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_mu(run: *const KreinRun, index: usize, out: *mut f64) -> KreinStatus {
    guard(|| {
        *out_arg(out)? = report_at(handle(run)?, index)?.state.mu;
        Ok(())
    })
}

/// Eigenvalue counts (lambda plane) of report `index`.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_counts(run: *const KreinRun, index: usize, out: *mut KreinCounts) -> KreinStatus {
    guard(|| {
        let r = report_at(handle(run)?, index)?;
        let c = r.counts();
        *out_arg(out)? = KreinCounts {
            k_ham: r.index.k_ham,
            k_r: c.k_r,
            k_c: c.k_c,
            k_i_minus: c.k_i_minus,
            identity_holds: i32::from(r.classification.identity_holds),
        };
        Ok(())
    })
}

/// Verdict of report `index`.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_verdict(run: *const KreinRun, index: usize, out: *mut KreinVerdict) -> KreinStatus {
    guard(|| {
        *out_arg(out)? = verdict(report_at(handle(run)?, index)?.status());
        Ok(())
    })
}

/// Number of classified eigenvalues of report `index`.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_eigenvalue_count(run: *const KreinRun, index: usize, out: *mut usize) -> KreinStatus {
    guard(|| {
        *out_arg(out)? = report_at(handle(run)?, index)?.classification.eigenvalues.len();
        Ok(())
    })
}

/// Classified eigenvalue `k` of report `index`.
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_eigenvalue(
    run: *const KreinRun,
    index: usize,
    k: usize,
    out: *mut KreinEigenvalue,
) -> KreinStatus {
    guard(|| {
        let r = report_at(handle(run)?, index)?;
        let eigs = &r.classification.eigenvalues;
        let e = eigs.get(k).ok_or((KreinStatus::OutOfRange, format!("eigenvalue {k} of {}", eigs.len())))?;
        *out_arg(out)? = KreinEigenvalue {
            lambda_re: e.lambda.re,
            lambda_im: e.lambda.im,
            z_re: e.z.re,
            z_im: e.z.im,
            multiplicity: e.multiplicity,
            source: match e.source {
                EigenSource::KreinZero => 0,
                EigenSource::RemovablePole => 1,
                EigenSource::Direct => 2,
            },
            signature: match e.signature {
                Signature::NearDegenerate => 0,
                s => s.as_int(),
            },
        };
        Ok(())
    })
}

/// Report `index` as JSON. Free the string with [`krein_string_free`].
///
/// # Safety
/// `run` must be a valid handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn krein_report_json(run: *const KreinRun, index: usize, out: *mut *mut c_char) -> KreinStatus {
    guard(|| {
        let r = report_at(handle(run)?, index)?;
        let text = serde_json::to_string(r).map_err(|e| (KreinStatus::Io, e.to_string()))?;
        *out_arg(out)? = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Release a string returned by this library; null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn krein_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// `lambda` on the principal branch with `z = -lambda^2`.
///
/// # Safety
/// `lambda_re` and `lambda_im` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn krein_map_z(z_re: f64, z_im: f64, lambda_re: *mut f64, lambda_im: *mut f64) -> KreinStatus {
    guard(|| {
        let l = map_z(Complex64::new(z_re, z_im));
        *out_arg(lambda_re)? = l.re;
        *out_arg(lambda_im)? = l.im;
        Ok(())
    })
}
