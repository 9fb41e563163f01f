//! C ABI over the stationthin library.
//!
//! Every fallible function returns a [`StStatus`]; on failure the message is
//! available from [`st_last_error`] on the same thread. Missing predictor
//! values are passed as NaN.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stationthin::domain::{e_to_rh, rh_to_e, saturation_vapor_pressure};
use stationthin::evaluation::compute_metrics;
use stationthin::gbt::TreeEnsemble;
use stationthin::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Domain = 3,
    Range = 4,
    Config = 5,
    Data = 6,
    Numerical = 7,
    Schema = 8,
    Io = 9,
    Parse = 10,
    Panic = 11,
}

/// Opaque handle to a trained model.
pub struct StModel {
    inner: TreeEnsemble,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StMetrics {
    pub n: usize,
    pub rmse: f64,
    pub mae: f64,
    pub mbe: f64,
    /// NaN when undefined (fewer than two pairs or constant observations).
    pub r2: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn status_of(err: &Error) -> StStatus {
    match err {
        Error::Domain(_) => StStatus::Domain,
        Error::Range(_) => StStatus::Range,
        Error::Config(_) => StStatus::Config,
        Error::Data(_) => StStatus::Data,
        Error::Numerical(_) => StStatus::Numerical,
        Error::Schema { .. } => StStatus::Schema,
        Error::Io(_) | Error::MissingArtifact { .. } => StStatus::Io,
        Error::Csv(_) | Error::Json(_) => StStatus::Parse,
    }
}

/// Runs `f`, recording errors and panics.
fn guard(f: impl FnOnce() -> Result<(), (StStatus, String)>) -> StStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            StStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (StStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StStatus, String) {
    (StStatus::NullPointer, format!("{what} is null"))
}

unsafe fn write<T>(out: *mut T, v: T, what: &str) -> Result<(), (StStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    *out = v;
    Ok(())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (StStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (StStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn row_from(values: &[f64]) -> Vec<Option<f64>> {
    values.iter().map(|v| (!v.is_nan()).then_some(*v)).collect()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn st_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn st_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Saturation vapor pressure over water in hPa at `ta` degC.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn st_saturation_vapor_pressure(ta: f64, out: *mut f64) -> StStatus {
    guard(|| write(out, saturation_vapor_pressure(ta).map_err(lib_err)?, "out"))
}

/// Vapor pressure in hPa from RH in percent and Ta in degC.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn st_rh_to_e(rh: f64, ta: f64, out: *mut f64) -> StStatus {
    guard(|| write(out, rh_to_e(rh, ta).map_err(lib_err)?, "out"))
}

/// RH in percent from vapor pressure in hPa and Ta in degC.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn st_e_to_rh(e: f64, ta: f64, out: *mut f64) -> StStatus {
    guard(|| write(out, e_to_rh(e, ta).map_err(lib_err)?, "out"))
}

/// Parses a model from its JSON envelope. Free the handle with
/// [`st_model_free`].
///
/// # Safety
/// `json` must be null or a NUL-terminated string; `out` must be null or
/// valid for writes.
#[no_mangle]
pub unsafe extern "C" fn st_model_from_json(json: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        let s = str_arg(json, "json")?;
        let inner = TreeEnsemble::from_json(s).map_err(lib_err)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(StModel { inner }));
        Ok(())
    })
}

/// Loads a model file written by the library.
///
/// # Safety
/// As for [`st_model_from_json`], with `path` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn st_model_load(path: *const c_char, out: *mut *mut StModel) -> StStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let inner = TreeEnsemble::load(Path::new(p)).map_err(lib_err)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = Box::into_raw(Box::new(StModel { inner }));
        Ok(())
    })
}

/// Serializes a model to its JSON envelope. Free the string with
/// [`st_string_free`].
///
/// # Safety
/// `model` must be null or a live handle; `out` must be null or valid for
/// writes.
#[no_mangle]
pub unsafe extern "C" fn st_model_to_json(model: *const StModel, out: *mut *mut c_char) -> StStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let json = m.inner.to_json().map_err(lib_err)?;
        let c = CString::new(json).map_err(|e| (StStatus::Parse, e.to_string()))?;
        write(out, c.into_raw(), "out")
    })
}

/// Number of features a model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn st_model_n_features(model: *const StModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_features)
}

/// Predicts one row of `n_features` values; NaN marks a missing value.
///
/// # Safety
/// `row` must point to `n_features` doubles; `model` and `out` as above.
#[no_mangle]
pub unsafe extern "C" fn st_model_predict(
    model: *const StModel,
    row: *const f64,
    n_features: usize,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if row.is_null() {
            return Err(null("row"));
        }
        let values = std::slice::from_raw_parts(row, n_features);
        let p = m.inner.predict(&row_from(values)).map_err(lib_err)?;
        write(out, p, "out")
    })
}

/// Predicts `n_rows` rows stored row-major in `x`, writing `n_rows` values
/// to `out`.
///
/// # Safety
/// `x` must point to `n_rows * n_features` doubles and `out` to `n_rows`
/// writable doubles.
#[no_mangle]
pub unsafe extern "C" fn st_model_predict_batch(
    model: *const StModel,
    x: *const f64,
    n_rows: usize,
    n_features: usize,
    out: *mut f64,
) -> StStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if n_rows == 0 {
            return Ok(());
        }
        if x.is_null() {
            return Err(null("x"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let len = n_rows.checked_mul(n_features).ok_or_else(|| (StStatus::Range, "matrix too large".to_string()))?;
        let values = std::slice::from_raw_parts(x, len);
        let out = std::slice::from_raw_parts_mut(out, n_rows);
        for (chunk, o) in values.chunks(n_features.max(1)).zip(out.iter_mut()) {
            *o = m.inner.predict(&row_from(chunk)).map_err(lib_err)?;
        }
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_model_free(model: *mut StModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn st_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Error metrics of `n` prediction/observation pairs.
///
/// # Safety
/// `pred` and `obs` must point to `n` doubles; `out` must be null or valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn st_metrics(pred: *const f64, obs: *const f64, n: usize, out: *mut StMetrics) -> StStatus {
    guard(|| {
        if n == 0 {
            return Err((StStatus::Data, "no pairs".to_string()));
        }
        if pred.is_null() || obs.is_null() {
            return Err(null("pred or obs"));
        }
        let p = std::slice::from_raw_parts(pred, n);
        let o = std::slice::from_raw_parts(obs, n);
        if p.iter().chain(o).any(|v| !v.is_finite()) {
            return Err((StStatus::Domain, "non-finite input".to_string()));
        }
        let m = compute_metrics(p, o).ok_or_else(|| (StStatus::Data, "no pairs".to_string()))?;
        write(out, StMetrics { n: m.n, rmse: m.rmse, mae: m.mae, mbe: m.mbe, r2: m.r2.unwrap_or(f64::NAN) }, "out")
    })
}
