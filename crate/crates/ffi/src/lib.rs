//! C ABI over the strainforge pipeline.
//!
//! Objects cross the boundary as opaque handles created by `sf_*_new`,
//! `sf_*_load` or `sf_run` and released with the matching `sf_*_free`.
//! Fallible calls return an [`SfStatus`]; the message of the most recent
//! failure on the calling thread is available from [`sf_last_error`].
//! Matrices are row-major `double[9]`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use strainforge::phantom::{PhantomOverrides, Preset, ViewLayout};
use strainforge::pipeline::{self, PipelineConfig, QcStatus, RunReport, StageError};
use strainforge::strain::{green_lagrange, GlobalPeaks};
use strainforge::study::{load_study, Study};
use strainforge::{Error, Mat3};

/// Result codes. Nonzero codes match the command line exit codes where one
/// exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SfStatus {
    Ok = 0,
    Validation = 2,
    Numeric = 3,
    Io = 4,
    /// A null pointer or a string that is not UTF-8.
    InvalidArgument = 5,
    /// The library panicked; the handle arguments should not be reused.
    Internal = 6,
}

/// A loaded study bundle.
pub struct SfStudy {
    study: Study,
}

/// Pipeline settings.
pub struct SfConfig {
    config: PipelineConfig,
}

/// Outcome of a pipeline run.
pub struct SfReport {
    report: RunReport,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_last_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(code: i32) -> SfStatus {
    match code {
        3 => SfStatus::Numeric,
        4 => SfStatus::Io,
        _ => SfStatus::Validation,
    }
}

fn fail(e: &Error) -> SfStatus {
    set_last_error(e.to_string());
    status_of(e.exit_code())
}

fn fail_stage(e: &StageError) -> SfStatus {
    set_last_error(e.to_json());
    status_of(e.exit_code())
}

fn invalid(msg: &str) -> SfStatus {
    set_last_error(msg.to_string());
    SfStatus::InvalidArgument
}

fn guarded(f: impl FnOnce() -> SfStatus) -> SfStatus {
    clear_last_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            SfStatus::Internal
        }
    }
}

/// # Safety
/// `s` is null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(s: *const c_char, name: &str) -> Result<&'a str, SfStatus> {
    if s.is_null() {
        return Err(invalid(&format!("{name} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(&format!("{name} is not UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s).map_or(ptr::null_mut(), CString::into_raw)
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn sf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn sf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library.
///
/// # Safety
/// `s` is null or was returned by a `sf_*` function documented as
/// returning an owned string, and has not been freed.
#[no_mangle]
pub unsafe extern "C" fn sf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads `<bundle_dir>/study.json`.
///
/// # Safety
/// `bundle_dir` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_study_load(bundle_dir: *const c_char, out: *mut *mut SfStudy) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let dir = match str_arg(bundle_dir, "bundle_dir") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match load_study(&PathBuf::from(dir)) {
            Ok(study) => {
                *out = Box::into_raw(Box::new(SfStudy { study }));
                SfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Number of views, or 0 for a null handle.
///
/// # Safety
/// `study` is null or a live handle from [`sf_study_load`].
#[no_mangle]
pub unsafe extern "C" fn sf_study_view_count(study: *const SfStudy) -> usize {
    study.as_ref().map_or(0, |s| s.study.views.len())
}

/// Number of frames, or 0 for a null handle.
///
/// # Safety
/// `study` is null or a live handle from [`sf_study_load`].
#[no_mangle]
pub unsafe extern "C" fn sf_study_frame_count(study: *const SfStudy) -> usize {
    study.as_ref().map_or(0, |s| s.study.frames())
}

/// # Safety
/// `study` is null or a live handle from [`sf_study_load`].
#[no_mangle]
pub unsafe extern "C" fn sf_study_free(study: *mut SfStudy) {
    if !study.is_null() {
        drop(Box::from_raw(study));
    }
}

/// Default settings.
#[no_mangle]
pub extern "C" fn sf_config_new() -> *mut SfConfig {
    Box::into_raw(Box::new(SfConfig {
        config: PipelineConfig::default(),
    }))
}

/// Parses a JSON config; unknown keys are rejected.
///
/// # Safety
/// `json` is a NUL-terminated string; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_config_from_json(json: *const c_char, out: *mut *mut SfConfig) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let text = match str_arg(json, "json") {
            Ok(s) => s,
            Err(s) => return s,
        };
        match PipelineConfig::from_json(text) {
            Ok(config) => {
                *out = Box::into_raw(Box::new(SfConfig { config }));
                SfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// The config as JSON (owned string, free with [`sf_string_free`]).
///
/// # Safety
/// `config` is null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sf_config_to_json(config: *const SfConfig) -> *mut c_char {
    config
        .as_ref()
        .map_or(ptr::null_mut(), |c| into_c_string(c.config.to_json()))
}

/// # Safety
/// `config` is null or a live config handle.
#[no_mangle]
pub unsafe extern "C" fn sf_config_free(config: *mut SfConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Writes a phantom bundle for preset `incompressible`, `contractile`,
/// `rigid` or `translate` with the default layout.
///
/// # Safety
/// `preset` and `out_dir` are NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn sf_phantom_write(preset: *const c_char, out_dir: *const c_char) -> SfStatus {
    guarded(|| {
        let (name, dir) = match (str_arg(preset, "preset"), str_arg(out_dir, "out_dir")) {
            (Ok(n), Ok(d)) => (n, d),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let p: Preset = match name.parse() {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        match pipeline::phantom_stage(
            p,
            &PhantomOverrides::default(),
            &ViewLayout::default(),
            &PathBuf::from(dir),
            false,
        ) {
            Ok(_) => SfStatus::Ok,
            Err(e) => fail_stage(&e),
        }
    })
}

/// Runs every stage from `bundle_dir` into `out_dir`. `config` may be null
/// for the defaults merged with the bundle's own `pipeline.json`.
///
/// # Safety
/// `config` is null or a live config handle; the strings are
/// NUL-terminated; `out` is a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sf_run(
    config: *const SfConfig,
    bundle_dir: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut SfReport,
) -> SfStatus {
    guarded(|| {
        if out.is_null() {
            return invalid("out is null");
        }
        *out = ptr::null_mut();
        let (bundle, dir) = match (str_arg(bundle_dir, "bundle_dir"), str_arg(out_dir, "out_dir")) {
            (Ok(b), Ok(d)) => (PathBuf::from(b), PathBuf::from(d)),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let mut cfg = match config.as_ref() {
            Some(c) => c.config.clone(),
            None => match PipelineConfig::resolve(None, Some(&bundle)) {
                Ok(c) => c,
                Err(e) => return fail(&e),
            },
        };
        cfg.bundle = Some(bundle);
        cfg.out = Some(dir);
        match pipeline::run_pipeline(&cfg) {
            Ok(report) => {
                *out = Box::into_raw(Box::new(SfReport { report }));
                SfStatus::Ok
            }
            Err(e) => fail_stage(&e),
        }
    })
}

/// Global peak strains `[Err, Ecc, Ell]`.
///
/// # Safety
/// `report` is a live report handle; `peaks` points to 3 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_report_global_peaks(report: *const SfReport, peaks: *mut f64) -> SfStatus {
    let Some(r) = report.as_ref() else {
        return invalid("report is null");
    };
    if peaks.is_null() {
        return invalid("peaks is null");
    }
    let g = r.report.global_peaks;
    ptr::copy_nonoverlapping([g.err, g.ecc, g.ell].as_ptr(), peaks, 3);
    SfStatus::Ok
}

/// Fraction of mesh nodes whose motion was extrapolated, or NaN for a null
/// handle.
///
/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn sf_report_extrapolated_fraction(report: *const SfReport) -> f64 {
    report.as_ref().map_or(f64::NAN, |r| r.report.extrapolated_fraction)
}

/// 1 if quality control marked the run degraded, 0 if not, -1 for null.
///
/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn sf_report_is_degraded(report: *const SfReport) -> i32 {
    report
        .as_ref()
        .map_or(-1, |r| (r.report.qc.status == QcStatus::Degraded) as i32)
}

/// The report as JSON (owned string, free with [`sf_string_free`]).
///
/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn sf_report_to_json(report: *const SfReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| {
        serde_json::to_string_pretty(&r.report).map_or(ptr::null_mut(), into_c_string)
    })
}

/// # Safety
/// `report` is null or a live report handle.
#[no_mangle]
pub unsafe extern "C" fn sf_report_free(report: *mut SfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Green-Lagrange strain `E = (F^T F - I) / 2`.
///
/// # Safety
/// `f` points to 9 readable and `e` to 9 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sf_green_lagrange(f: *const f64, e: *mut f64) -> SfStatus {
    if f.is_null() || e.is_null() {
        return invalid("matrix pointer is null");
    }
    let m = Mat3::from_row_slice(std::slice::from_raw_parts(f, 9));
    let g = green_lagrange(&m);
    let out = std::slice::from_raw_parts_mut(e, 9);
    for r in 0..3 {
        for c in 0..3 {
            out[3 * r + c] = g[(r, c)];
        }
    }
    SfStatus::Ok
}

/// Mean and population SD over `n` global-peak triples `[Err, Ecc, Ell]`.
///
/// # Safety
/// `peaks` points to `3 * n` readable doubles; `mean` and `sd` to 3
/// writable doubles each.
#[no_mangle]
pub unsafe extern "C" fn sf_cohort_summary(peaks: *const f64, n: usize, mean: *mut f64, sd: *mut f64) -> SfStatus {
    guarded(|| {
        if mean.is_null() || sd.is_null() || (peaks.is_null() && n > 0) {
            return invalid("pointer argument is null");
        }
        let rows: Vec<GlobalPeaks> = if n == 0 {
            Vec::new()
        } else {
            std::slice::from_raw_parts(peaks, 3 * n)
                .chunks_exact(3)
                .map(|c| GlobalPeaks {
                    err: c[0],
                    ecc: c[1],
                    ell: c[2],
                })
                .collect()
        };
        match pipeline::cohort_summary(&rows) {
            Ok(s) => {
                ptr::copy_nonoverlapping([s.mean.err, s.mean.ecc, s.mean.ell].as_ptr(), mean, 3);
                ptr::copy_nonoverlapping([s.sd.err, s.sd.ecc, s.sd.ell].as_ptr(), sd, 3);
                SfStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}
