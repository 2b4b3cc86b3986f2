//! C ABI over `forcelr`.
//!
//! Objects are opaque handles created by `flr_*_new`/`flr_*_load` style
//! functions and released with the matching `_free`. Every fallible call
//! returns an [`FlrStatus`]; on failure [`flr_last_error`] describes the
//! problem. Enum-valued arguments are passed as `uint32_t` so that an
//! out-of-range value from C is reported instead of being undefined.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use forcelr::archive::ModelArchive;
use forcelr::decompose::{decompose_net, RankChoice};
use forcelr::force::{force_gradient, reference_regularizer, ForceConfig, ForceKind, StepScaler};
use forcelr::lowrank::{
    break_even_rank, factorize, method_error_curve, select_rank_from_spectrum, theoretical_speedup,
    LowRankFactorization, Method,
};
use forcelr::nn::{Net, Tensor};
use forcelr::{Error, Matrix};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    /// Degenerate input or a solver that did not converge.
    Numerical = 4,
    Io = 5,
    Format = 6,
    Divergence = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum FlrForceKind {
    L2 = 0,
    L1 = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum FlrScaler {
    Length = 0,
    ReciprocalLength = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub enum FlrMethod {
    Pca = 0,
    Svd = 1,
    Kmeans = 2,
}

/// Row-major `N x D` filter matrix.
pub struct FlrFilterMatrix(Matrix);

/// `W ≈ combination · basis`.
pub struct FlrFactorization(LowRankFactorization);

/// A network loaded from a model archive.
pub struct FlrModel(ModelArchive);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> FlrStatus {
    match e {
        Error::Shape(_) => FlrStatus::Shape,
        Error::InvalidArgument(_) => FlrStatus::InvalidArgument,
        Error::DegenerateDivisor(_) | Error::DegenerateRow(_) | Error::NonConvergence { .. } => FlrStatus::Numerical,
        Error::Divergence { .. } => FlrStatus::Divergence,
        Error::Format(_) => FlrStatus::Format,
        Error::Io { .. } => FlrStatus::Io,
    }
}

struct Fail(FlrStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FlrStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(FlrStatus::InvalidArgument, msg.into())
}

/// Runs `f`, recording any failure (including a panic) as the last error.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FlrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            FlrStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            FlrStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: caller passes a live handle or null.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn input<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` readable elements.
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn output<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    // SAFETY: caller guarantees `len` writable elements.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

unsafe fn put<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    // SAFETY: non-null, caller guarantees it is writable.
    unsafe { out.write(v) };
    Ok(())
}

fn copy_out(dst: &mut [f64], src: &[f64]) -> Result<(), Fail> {
    if dst.len() != src.len() {
        return Err(Fail(
            FlrStatus::Shape,
            format!("output buffer holds {} values, {} needed", dst.len(), src.len()),
        ));
    }
    dst.copy_from_slice(src);
    Ok(())
}

fn force_kind(v: u32) -> Result<ForceKind, Fail> {
    match v {
        0 => Ok(ForceKind::L2),
        1 => Ok(ForceKind::L1),
        _ => Err(invalid(format!("unknown force kind {v}"))),
    }
}

fn scaler(v: u32) -> Result<StepScaler, Fail> {
    match v {
        0 => Ok(StepScaler::Length),
        1 => Ok(StepScaler::ReciprocalLength),
        _ => Err(invalid(format!("unknown scaler {v}"))),
    }
}

fn method(v: u32) -> Result<Method, Fail> {
    match v {
        0 => Ok(Method::Pca),
        1 => Ok(Method::Svd),
        2 => Ok(Method::KMeans),
        _ => Err(invalid(format!("unknown method {v}"))),
    }
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    // SAFETY: caller passes a NUL-terminated string.
    let s = unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(Path::new(s))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next `flr_*` call on the same thread.
#[no_mangle]
pub extern "C" fn flr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn flr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `rows * cols` row-major values into a new filter matrix.
///
/// # Safety
/// `data` must point to `rows * cols` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flr_filter_matrix_new(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut FlrFilterMatrix,
) -> FlrStatus {
    guard(|| {
        let len = rows.checked_mul(cols).ok_or_else(|| invalid("rows * cols overflows"))?;
        let values = unsafe { input(data, len, "data") }?;
        let m = Matrix::from_vec(rows, cols, values.to_vec())?;
        unsafe { put(out, Box::into_raw(Box::new(FlrFilterMatrix(m))), "out") }
    })
}

/// # Safety
/// `m` must be null or a handle from `flr_filter_matrix_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flr_filter_matrix_free(m: *mut FlrFilterMatrix) {
    if !m.is_null() {
        // SAFETY: allocated by Box::into_raw in flr_filter_matrix_new.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Writes the force regularization gradient `ΔW` (same shape as `m`).
///
/// # Safety
/// `m` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flr_force_gradient(
    m: *const FlrFilterMatrix,
    kind: u32,
    step_scaler: u32,
    out: *mut f64,
    out_len: usize,
) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "matrix") }?;
        let mut cfg = ForceConfig::new(force_kind(kind)?, 1.0);
        cfg.scaler = scaler(step_scaler)?;
        let g = force_gradient(&m.0, &cfg);
        copy_out(unsafe { output(out, out_len, "out") }?, g.delta.as_slice())
    })
}

/// Pairwise-distance regularizer of the normalized filters.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flr_reference_regularizer(m: *const FlrFilterMatrix, kind: u32, out: *mut f64) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "matrix") }?;
        let r = reference_regularizer(&m.0, force_kind(kind)?)?;
        unsafe { put(out, r, "out") }
    })
}

/// `e_M / e_0` for `M = 1..=rows`, written to `out` (`rows` values).
///
/// # Safety
/// `m` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flr_error_curve(
    m: *const FlrFilterMatrix,
    method_id: u32,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "matrix") }?;
        let curve = method_error_curve(&m.0, method(method_id)?, seed)?;
        copy_out(unsafe { output(out, out_len, "out") }?, &curve)
    })
}

/// Smallest PCA rank whose relative reconstruction error is at most `tau`.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flr_select_rank(m: *const FlrFilterMatrix, tau: f64, out: *mut usize) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "matrix") }?;
        if !(0.0..1.0).contains(&tau) {
            return Err(invalid(format!("tau must be in [0, 1), got {tau}")));
        }
        let spectrum = forcelr::filters::covariance_spectrum(&m.0)?.eigenvalues;
        unsafe { put(out, select_rank_from_spectrum(&spectrum, tau), "out") }
    })
}

/// Rank-`rank` factorization of `m`.
///
/// # Safety
/// `m` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flr_factorize(
    m: *const FlrFilterMatrix,
    method_id: u32,
    rank: usize,
    seed: u64,
    out: *mut *mut FlrFactorization,
) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "matrix") }?;
        let f = factorize(&m.0, method(method_id)?, rank, seed)?;
        unsafe { put(out, Box::into_raw(Box::new(FlrFactorization(f))), "out") }
    })
}

/// # Safety
/// `f` must be null or a handle from `flr_factorize` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flr_factorization_free(f: *mut FlrFactorization) {
    if !f.is_null() {
        // SAFETY: allocated by Box::into_raw in flr_factorize.
        drop(unsafe { Box::from_raw(f) });
    }
}

/// Rank `M` of a factorization (0 for a null handle).
///
/// # Safety
/// `f` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn flr_factorization_rank(f: *const FlrFactorization) -> usize {
    // SAFETY: caller passes a live handle or null.
    unsafe { f.as_ref() }.map_or(0, |f| f.0.rank)
}

/// Copies the `M x cols` basis.
///
/// # Safety
/// `f` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flr_factorization_basis(f: *const FlrFactorization, out: *mut f64, out_len: usize) -> FlrStatus {
    guard(|| {
        let f = unsafe { handle(f, "factorization") }?;
        copy_out(unsafe { output(out, out_len, "out") }?, f.0.basis.as_slice())
    })
}

/// Copies the `rows x M` combination coefficients.
///
/// # Safety
/// `f` must be a live handle; `out` must hold `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn flr_factorization_combination(
    f: *const FlrFactorization,
    out: *mut f64,
    out_len: usize,
) -> FlrStatus {
    guard(|| {
        let f = unsafe { handle(f, "factorization") }?;
        copy_out(unsafe { output(out, out_len, "out") }?, f.0.combination.as_slice())
    })
}

/// MAC ratio of an `N x C x H x W` convolution with `h_out x w_out` output
/// to its rank-`m` split.
#[no_mangle]
pub extern "C" fn flr_theoretical_speedup(
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    h_out: usize,
    w_out: usize,
    m: usize,
) -> f64 {
    theoretical_speedup(n, c, h, w, h_out, w_out, m)
}

/// `NCHW / (CHW + N)`.
#[no_mangle]
pub extern "C" fn flr_break_even_rank(n: usize, c: usize, h: usize, w: usize) -> f64 {
    break_even_rank(n, c, h, w)
}

/// Loads a model archive directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn flr_model_load(dir: *const c_char, out: *mut *mut FlrModel) -> FlrStatus {
    guard(|| {
        let a = ModelArchive::load(unsafe { path(dir) }?)?;
        unsafe { put(out, Box::into_raw(Box::new(FlrModel(a))), "out") }
    })
}

/// Saves a model archive directory, replacing any existing one.
///
/// # Safety
/// `m` must be a live handle; `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn flr_model_save(m: *const FlrModel, dir: *const c_char) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "model") }?;
        Ok(m.0.save(unsafe { path(dir) }?)?)
    })
}

/// # Safety
/// `m` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn flr_model_free(m: *mut FlrModel) {
    if !m.is_null() {
        // SAFETY: allocated by Box::into_raw in this library.
        drop(unsafe { Box::from_raw(m) });
    }
}

/// Input shape `C, H, W` and number of classes.
///
/// # Safety
/// `m` must be a live handle; `shape` must hold 3 values, `classes` 1.
#[no_mangle]
pub unsafe extern "C" fn flr_model_shape(m: *const FlrModel, shape: *mut usize, classes: *mut usize) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "model") }?;
        unsafe { output(shape, 3, "shape") }?.copy_from_slice(&m.0.net.input);
        unsafe { put(classes, m.0.net.classes, "classes") }
    })
}

/// Logits for `batch` inputs of `C*H*W` floats each; `out` receives
/// `batch * classes` floats.
///
/// # Safety
/// `m` must be a live handle; buffers must hold the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn flr_model_forward(
    m: *const FlrModel,
    inputs: *const f32,
    batch: usize,
    out: *mut f32,
    out_len: usize,
) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "model") }?;
        let net: &Net<f32> = &m.0.net;
        let [c, h, w] = net.input;
        let x = unsafe { input(inputs, batch * c * h * w, "inputs") }?;
        let y = net.forward(&Tensor::new([batch, c, h, w], x.to_vec())?)?;
        let dst = unsafe { output(out, out_len, "out") }?;
        if dst.len() != y.data.len() {
            return Err(Fail(
                FlrStatus::Shape,
                format!("output buffer holds {} values, {} needed", dst.len(), y.data.len()),
            ));
        }
        dst.copy_from_slice(&y.data);
        Ok(())
    })
}

/// Decomposes every convolution; ranks come from `ranks` (one per
/// convolution, `n_ranks` values) when non-null, otherwise from `tau`.
///
/// # Safety
/// `m` must be a live handle; `ranks` null or `n_ranks` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn flr_model_decompose(
    m: *const FlrModel,
    method_id: u32,
    tau: f64,
    ranks: *const usize,
    n_ranks: usize,
    seed: u64,
    out: *mut *mut FlrModel,
) -> FlrStatus {
    guard(|| {
        let m = unsafe { handle(m, "model") }?;
        let choice = if ranks.is_null() {
            RankChoice::Tau(tau)
        } else {
            RankChoice::Explicit(unsafe { input(ranks, n_ranks, "ranks") }?.to_vec())
        };
        let d = decompose_net(&m.0.net, method(method_id)?, &choice, seed)?;
        let mut archive = m.0.clone();
        archive.net = d.net;
        archive.decomposition = Some(forcelr::archive::DecompositionInfo {
            tau: ranks.is_null().then_some(tau),
            ..d.info
        });
        unsafe { put(out, Box::into_raw(Box::new(FlrModel(archive))), "out") }
    })
}
