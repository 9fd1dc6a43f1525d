//! C ABI over trained models and fitted detectors.
//!
//! Every fallible call returns an `LpathStatus`. On failure the message is
//! kept per thread and can be read with `lpath_last_error`. Handles are
//! opaque and must be released with the matching `_free` call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use lpath::detectors::{detector_from_bytes, load_detector, FittedDetector};
use lpath::stats::{extract_stats, LPathRecord};
use lpath::vae::{load_model, model_from_bytes, MlpVae};
use lpath::LpathError;
use ndarray::ArrayView2;

pub const LPATH_OK: i32 = 0;
/// A required pointer argument was null.
pub const LPATH_ERR_NULL: i32 = 1;
/// Invalid configuration or argument outside its domain.
pub const LPATH_ERR_CONFIG: i32 = 2;
/// Malformed input, wrong shape or unreadable file format.
pub const LPATH_ERR_INPUT: i32 = 3;
/// Non-finite value or singular matrix during computation.
pub const LPATH_ERR_NUMERIC: i32 = 4;
pub const LPATH_ERR_IO: i32 = 5;
/// A Rust panic was caught at the boundary.
pub const LPATH_ERR_PANIC: i32 = 6;

pub type LpathStatus = i32;

/// Trained VAE.
pub struct LpathVae(MlpVae);

/// Fitted two-stage detector: conditioning pipeline, scorer and threshold.
pub struct LpathDetector(FittedDetector);

/// Residual (u), latent mean (v) and latent sigma (w) norms of one sample.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LpathStats {
    pub u_l2: f64,
    pub u_lp: f64,
    pub u_lq: f64,
    pub v_l2: f64,
    pub v_lp: f64,
    pub v_lq: f64,
    pub w_l2: f64,
    pub w_lp: f64,
    pub w_lq: f64,
    pub p: f64,
    pub q: f64,
}

impl From<LPathRecord> for LpathStats {
    fn from(r: LPathRecord) -> Self {
        LpathStats {
            u_l2: r.u.l2,
            u_lp: r.u.lp,
            u_lq: r.u.lq,
            v_l2: r.v.l2,
            v_lp: r.v.lp,
            v_lq: r.v.lq,
            w_l2: r.w.l2,
            w_lp: r.w.lp,
            w_lq: r.w.lq,
            p: r.p,
            q: r.q,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &LpathError) -> i32 {
    match e {
        LpathError::InvalidConfig(_) | LpathError::Domain(_) => LPATH_ERR_CONFIG,
        LpathError::InvalidInput(_)
        | LpathError::Shape { .. }
        | LpathError::Format { .. }
        | LpathError::InsufficientData(_) => LPATH_ERR_INPUT,
        LpathError::Numeric { .. } | LpathError::Singular(_) => LPATH_ERR_NUMERIC,
        LpathError::Io(_) => LPATH_ERR_IO,
    }
}

enum Fail {
    Null(&'static str),
    Lpath(LpathError),
}

impl From<LpathError> for Fail {
    fn from(e: LpathError) -> Self {
        Fail::Lpath(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> LpathStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => LPATH_OK,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            LPATH_ERR_NULL
        }
        Ok(Err(Fail::Lpath(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            LPATH_ERR_PANIC
        }
    }
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| LpathError::InvalidInput("path is not valid UTF-8".into()))?;
    Ok(Path::new(s))
}

fn check_len(context: &'static str, expected: usize, got: usize) -> Result<(), Fail> {
    if expected != got {
        return Err(LpathError::Shape { context, expected, got }.into());
    }
    Ok(())
}

fn matrix<'a>(x: &'a [f64], rows: usize, cols: usize) -> Result<ArrayView2<'a, f64>, Fail> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| LpathError::InvalidInput("rows * cols overflows".into()))?;
    check_len("matrix buffer", len, x.len())?;
    ArrayView2::from_shape((rows, cols), x).map_err(|e| LpathError::InvalidInput(e.to_string()).into())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn lpath_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lpath_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_load(path: *const c_char, out: *mut *mut LpathVae) -> LpathStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = load_model(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LpathVae(model)));
        Ok(())
    })
}

/// Loads a checkpoint from memory.
///
/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_load_bytes(bytes: *const u8, len: usize, out: *mut *mut LpathVae) -> LpathStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let model = model_from_bytes(input(bytes, len, "bytes")?)?;
        *out = Box::into_raw(Box::new(LpathVae(model)));
        Ok(())
    })
}

/// # Safety
/// `vae` must be null or a handle from `lpath_vae_load*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_free(vae: *mut LpathVae) {
    if !vae.is_null() {
        drop(Box::from_raw(vae));
    }
}

/// Input dimension, or 0 for a null handle.
///
/// # Safety
/// `vae` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_input_dim(vae: *const LpathVae) -> usize {
    vae.as_ref().map_or(0, |v| v.0.input_dim())
}

/// Latent dimension, or 0 for a null handle.
///
/// # Safety
/// `vae` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_latent_dim(vae: *const LpathVae) -> usize {
    vae.as_ref().map_or(0, |v| v.0.latent_dim())
}

/// Posterior mean and standard deviation of one input.
///
/// # Safety
/// `x` holds `n` values; `mu` and `sigma` each have room for `m` values.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_encode(
    vae: *const LpathVae,
    x: *const f64,
    n: usize,
    mu: *mut f64,
    sigma: *mut f64,
    m: usize,
) -> LpathStatus {
    guard(|| {
        let vae = &handle(vae, "vae")?.0;
        check_len("encode input", vae.input_dim(), n)?;
        check_len("encode output", vae.latent_dim(), m)?;
        let (mu_v, sigma_v) = vae.encode(input(x, n, "x")?)?;
        output(mu, m, "mu")?.copy_from_slice(&mu_v);
        output(sigma, m, "sigma")?.copy_from_slice(&sigma_v);
        Ok(())
    })
}

/// Decoder mean at one latent point.
///
/// # Safety
/// `z` holds `m` values; `x` has room for `n` values.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_decode(
    vae: *const LpathVae,
    z: *const f64,
    m: usize,
    x: *mut f64,
    n: usize,
) -> LpathStatus {
    guard(|| {
        let vae = &handle(vae, "vae")?.0;
        check_len("decode input", vae.latent_dim(), m)?;
        check_len("decode output", vae.input_dim(), n)?;
        let xs = vae.decode(input(z, m, "z")?)?;
        output(x, n, "x")?.copy_from_slice(&xs);
        Ok(())
    })
}

/// Norm statistics of one input with exponents `p` and `q`.
///
/// # Safety
/// `x` holds `n` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_extract_stats(
    vae: *const LpathVae,
    x: *const f64,
    n: usize,
    p: f64,
    q: f64,
    out: *mut LpathStats,
) -> LpathStatus {
    guard(|| {
        let vae = &handle(vae, "vae")?.0;
        check_len("stats input", vae.input_dim(), n)?;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = extract_stats(vae, input(x, n, "x")?, p, q)?.into();
        Ok(())
    })
}

/// Row-wise statistics of a row-major `rows × n` matrix.
///
/// # Safety
/// `x` holds `rows * n` values; `out` has room for `rows` records.
#[no_mangle]
pub unsafe extern "C" fn lpath_vae_extract_stats_batch(
    vae: *const LpathVae,
    x: *const f64,
    rows: usize,
    n: usize,
    p: f64,
    q: f64,
    out: *mut LpathStats,
) -> LpathStatus {
    guard(|| {
        let vae = &handle(vae, "vae")?.0;
        check_len("stats input", vae.input_dim(), n)?;
        let len = rows.saturating_mul(n);
        let view = matrix(input(x, len, "x")?, rows, n)?;
        let recs = lpath::stats::extract_stats_batch(vae, view, p, q)?;
        for (o, r) in output(out, rows, "out")?.iter_mut().zip(recs) {
            *o = r.into();
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_load(path: *const c_char, out: *mut *mut LpathDetector) -> LpathStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let det = load_detector(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(LpathDetector(det)));
        Ok(())
    })
}

/// # Safety
/// `bytes` must point to `len` readable bytes and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_load_bytes(
    bytes: *const u8,
    len: usize,
    out: *mut *mut LpathDetector,
) -> LpathStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        let det = detector_from_bytes(input(bytes, len, "bytes")?)?;
        *out = Box::into_raw(Box::new(LpathDetector(det)));
        Ok(())
    })
}

/// # Safety
/// `det` must be null or a handle from `lpath_detector_load*` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_free(det: *mut LpathDetector) {
    if !det.is_null() {
        drop(Box::from_raw(det));
    }
}

/// Number of feature columns, or 0 for a null handle.
///
/// # Safety
/// `det` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_dim(det: *const LpathDetector) -> usize {
    det.as_ref().map_or(0, |d| d.0.dim())
}

/// Decision threshold on the score (flag when score > threshold).
///
/// # Safety
/// `det` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_threshold(det: *const LpathDetector, out: *mut f64) -> LpathStatus {
    guard(|| {
        let det = &handle(det, "det")?.0;
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = det.scorecard.threshold();
        Ok(())
    })
}

/// Scores one feature row. `is_ood` may be null.
///
/// # Safety
/// `x` holds `d` values; `score` is writable; `is_ood` is null or writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_score(
    det: *const LpathDetector,
    x: *const f64,
    d: usize,
    score: *mut f64,
    is_ood: *mut bool,
) -> LpathStatus {
    guard(|| {
        let det = &handle(det, "det")?.0;
        if score.is_null() {
            return Err(Fail::Null("score"));
        }
        let s = det.score_matrix(matrix(input(x, d, "x")?, 1, d)?)?[0];
        *score = s;
        if !is_ood.is_null() {
            *is_ood = det.decide(s);
        }
        Ok(())
    })
}

/// Scores a row-major `rows × d` feature matrix into `scores`.
///
/// # Safety
/// `x` holds `rows * d` values; `scores` has room for `rows` values.
#[no_mangle]
pub unsafe extern "C" fn lpath_detector_score_batch(
    det: *const LpathDetector,
    x: *const f64,
    rows: usize,
    d: usize,
    scores: *mut f64,
) -> LpathStatus {
    guard(|| {
        let det = &handle(det, "det")?.0;
        let view = matrix(input(x, rows.saturating_mul(d), "x")?, rows, d)?;
        if rows == 0 {
            return Ok(());
        }
        let s = det.score_matrix(view)?;
        output(scores, rows, "scores")?.copy_from_slice(&s);
        Ok(())
    })
}

/// Area under the ROC curve with OOD as the positive class; ties count half.
///
/// # Safety
/// `iid` and `ood` hold `n_iid` and `n_ood` values; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn lpath_auroc(
    iid: *const f64,
    n_iid: usize,
    ood: *const f64,
    n_ood: usize,
    out: *mut f64,
) -> LpathStatus {
    guard(|| {
        if out.is_null() {
            return Err(Fail::Null("out"));
        }
        *out = lpath::eval::auroc(input(iid, n_iid, "iid")?, input(ood, n_ood, "ood")?)?;
        Ok(())
    })
}
