//! C interface to `mar-kit`.
//!
//! Objects are opaque handles created by `mar_*_new`/`mar_*_load`/`mar_fit`
//! and released with the matching `*_free`. Every fallible call returns a
//! [`MarStatus`]; on failure the message is available from
//! [`mar_last_error_message`] on the same thread. Matrices cross the boundary
//! as column-major `double` arrays; indices are 0-based.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use mar_kit::inference::specification_test;
use mar_kit::io::{load_series, save_series};
use mar_kit::model::{irf_s1, random_covariance, random_model, simulate};
use mar_kit::{fit, DenseMatrix, FitOptions, MarError, MatrixSeries, Method, Setting};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Dimension = 3,
    Numeric = 4,
    RankDeficient = 5,
    Precondition = 6,
    Index = 7,
    Degenerate = 8,
    Domain = 9,
    Parse = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

/// Estimation method; pass as the `method` argument of [`mar_fit`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarMethod {
    Proj = 0,
    Lse = 1,
    Mle = 2,
}

/// Noise covariance design; pass as the `setting` argument of [`mar_simulate`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarSetting {
    /// Identity covariance.
    Identity = 1,
    /// Random full covariance.
    Full = 2,
    /// Random Kronecker covariance.
    Kronecker = 3,
}

/// A matrix time series `X_1, ..., X_T`.
pub struct MarSeries(MatrixSeries);

/// A fitted MAR(1) model.
pub struct MarFit(mar_kit::MarFit);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &MarError) -> MarStatus {
    match e {
        MarError::Dimension(_) => MarStatus::Dimension,
        MarError::Numeric(_) => MarStatus::Numeric,
        MarError::RankDeficient(_) => MarStatus::RankDeficient,
        MarError::Precondition(_) => MarStatus::Precondition,
        MarError::Index(_) => MarStatus::Index,
        MarError::Degenerate(_) => MarStatus::Degenerate,
        MarError::Domain(_) => MarStatus::Domain,
        MarError::Parse { .. } | MarError::IncompleteGrid { .. } | MarError::Duplicate { .. } => MarStatus::Parse,
        MarError::Config(_) => MarStatus::InvalidArgument,
        MarError::Io(_) => MarStatus::Io,
    }
}

struct Fail(MarStatus, String);

impl From<MarError> for Fail {
    fn from(e: MarError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MarStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            MarStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            MarStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn path_arg<'a>(p: *const c_char) -> Result<&'a Path, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| Fail(MarStatus::InvalidArgument, "path is not valid UTF-8".into()))
}

unsafe fn copy_matrix(m: &DenseMatrix, buf: *mut f64, len: usize) -> Result<(), Fail> {
    if buf.is_null() {
        return Err(null("buffer"));
    }
    if len < m.len() {
        return Err(Fail(
            MarStatus::BufferTooSmall,
            format!("buffer holds {len} values, {} needed", m.len()),
        ));
    }
    ptr::copy_nonoverlapping(m.as_slice().as_ptr(), buf, m.len());
    Ok(())
}

/// Copies the last error message of this thread, NUL-terminated and
/// truncated to `len` bytes, into `buf`. Returns the full message length
/// excluding the terminator; pass `buf = NULL` to query it.
///
/// # Safety
/// `buf` must be NULL or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn mar_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast::<c_char>(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Builds a series from `t_len` consecutive column-major `m x n` matrices.
///
/// # Safety
/// `data` must point to `m * n * t_len` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mar_series_new(
    data: *const f64,
    m: usize,
    n: usize,
    t_len: usize,
    out: *mut *mut MarSeries,
) -> MarStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        if data.is_null() {
            return Err(null("data"));
        }
        if m == 0 || n == 0 || t_len == 0 {
            return Err(Fail(MarStatus::InvalidArgument, "m, n and t_len must be positive".into()));
        }
        let cell = m * n;
        let values = std::slice::from_raw_parts(data, cell * t_len);
        let mats = values.chunks(cell).map(|c| DenseMatrix::from_column_slice(m, n, c)).collect();
        let s = MatrixSeries::new(mats)?;
        *out = Box::into_raw(Box::new(MarSeries(s)));
        Ok(())
    })
}

/// Reads a long-format CSV (`t,row,col,value`).
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mar_series_load(path: *const c_char, out: *mut *mut MarSeries) -> MarStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let s = load_series(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(MarSeries(s)));
        Ok(())
    })
}

/// Writes the series as long-format CSV.
///
/// # Safety
/// `series` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mar_series_save(series: *const MarSeries, path: *const c_char) -> MarStatus {
    guard(|| {
        let s = deref(series, "series")?;
        save_series(&s.0, path_arg(path)?)?;
        Ok(())
    })
}

/// # Safety
/// `series` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mar_series_dims(
    series: *const MarSeries,
    m: *mut usize,
    n: *mut usize,
    t_len: *mut usize,
) -> MarStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        *out_ptr(m, "m")? = s.m();
        *out_ptr(n, "n")? = s.n();
        *out_ptr(t_len, "t_len")? = s.len();
        Ok(())
    })
}

/// Copies observation `t` (0-based) into `buf` in column-major order.
///
/// # Safety
/// `series` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mar_series_get(series: *const MarSeries, t: usize, buf: *mut f64, len: usize) -> MarStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        if t >= s.len() {
            return Err(Fail(MarStatus::Index, format!("time index {t} outside 0..{}", s.len())));
        }
        copy_matrix(s.get(t), buf, len)
    })
}

/// # Safety
/// `series` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mar_series_free(series: *mut MarSeries) {
    if !series.is_null() {
        drop(Box::from_raw(series));
    }
}

/// Simulates `t_len` observations from a random stationary model with
/// `rho(A) rho(B) = rho`, after `burn_in` discarded steps.
///
/// # Safety
/// `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mar_simulate(
    setting: i32,
    m: usize,
    n: usize,
    t_len: usize,
    rho: f64,
    burn_in: usize,
    seed: u64,
    out: *mut *mut MarSeries,
) -> MarStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let setting = match setting {
            x if x == MarSetting::Identity as i32 => Setting::I,
            x if x == MarSetting::Full as i32 => Setting::II,
            x if x == MarSetting::Kronecker as i32 => Setting::III,
            other => return Err(Fail(MarStatus::InvalidArgument, format!("unknown setting {other}"))),
        };
        let model = random_model(m, n, rho, seed)?.with_cov(random_covariance(setting, m, n, seed)?)?;
        let s = simulate(&model, t_len, burn_in, seed)?;
        *out = Box::into_raw(Box::new(MarSeries(s)));
        Ok(())
    })
}

/// Fits `A` and `B`. `max_iter = 0` and `tol <= 0` select the defaults.
///
/// # Safety
/// `series` must be a live handle and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mar_fit(
    series: *const MarSeries,
    method: i32,
    max_iter: usize,
    tol: f64,
    out: *mut *mut MarFit,
) -> MarStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        let out = out_ptr(out, "out")?;
        let mut opts = FitOptions::default();
        if max_iter > 0 {
            opts.max_iter = max_iter;
        }
        if tol > 0.0 {
            opts.rel_tol = tol;
        }
        let method = match method {
            x if x == MarMethod::Proj as i32 => Method::Proj,
            x if x == MarMethod::Lse as i32 => Method::Lse,
            x if x == MarMethod::Mle as i32 => Method::Mle,
            other => return Err(Fail(MarStatus::InvalidArgument, format!("unknown method {other}"))),
        };
        let f = fit(s, method, &opts)?;
        *out = Box::into_raw(Box::new(MarFit(f)));
        Ok(())
    })
}

/// # Safety
/// `fit` must be a live handle; `m` and `n` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mar_fit_dims(fit: *const MarFit, m: *mut usize, n: *mut usize) -> MarStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        *out_ptr(m, "m")? = f.model.m();
        *out_ptr(n, "n")? = f.model.n();
        Ok(())
    })
}

/// Copies the `m x m` row coefficient `A` (unit Frobenius norm).
///
/// # Safety
/// `fit` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mar_fit_a(fit: *const MarFit, buf: *mut f64, len: usize) -> MarStatus {
    guard(|| copy_matrix(deref(fit, "fit")?.0.a(), buf, len))
}

/// Copies the `n x n` column coefficient `B`.
///
/// # Safety
/// `fit` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mar_fit_b(fit: *const MarFit, buf: *mut f64, len: usize) -> MarStatus {
    guard(|| copy_matrix(deref(fit, "fit")?.0.b(), buf, len))
}

/// # Safety
/// `fit` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mar_fit_convergence(fit: *const MarFit, converged: *mut bool, iterations: *mut usize) -> MarStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        *out_ptr(converged, "converged")? = f.converged;
        *out_ptr(iterations, "iterations")? = f.iterations;
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mar_fit_free(fit: *mut MarFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Wald test of Kronecker structure in the VAR(1) coefficient.
///
/// # Safety
/// `series` must be a live handle; the output pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn mar_spec_test(
    series: *const MarSeries,
    statistic: *mut f64,
    df: *mut usize,
    p_value: *mut f64,
) -> MarStatus {
    guard(|| {
        let s = &deref(series, "series")?.0;
        let (statistic, df, p_value) = (out_ptr(statistic, "statistic")?, out_ptr(df, "df")?, out_ptr(p_value, "p_value")?);
        let r = specification_test(s)?;
        *statistic = r.statistic;
        *df = r.df;
        *p_value = r.p_value;
        Ok(())
    })
}

/// Impulse responses of the fitted model to a one standard deviation shock
/// in entry `(shock_row, shock_col)`. Writes `horizon + 1` column-major
/// `m x n` responses back to back, so `buf` needs `(horizon + 1) * m * n`
/// doubles.
///
/// # Safety
/// `fit` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mar_irf(
    fit: *const MarFit,
    shock_row: usize,
    shock_col: usize,
    horizon: usize,
    buf: *mut f64,
    len: usize,
) -> MarStatus {
    guard(|| {
        let f = &deref(fit, "fit")?.0;
        if buf.is_null() {
            return Err(null("buffer"));
        }
        let r = irf_s1(&f.model, shock_row, shock_col, horizon)?;
        let cell = f.model.m() * f.model.n();
        let need = cell * (horizon + 1);
        if len < need {
            return Err(Fail(MarStatus::BufferTooSmall, format!("buffer holds {len} values, {need} needed")));
        }
        for (k, resp) in r.responses.iter().enumerate() {
            ptr::copy_nonoverlapping(resp.as_slice().as_ptr(), buf.add(k * cell), cell);
        }
        Ok(())
    })
}
