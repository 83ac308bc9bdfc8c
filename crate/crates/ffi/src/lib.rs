//! C interface to trendlab.
//!
//! Every fallible function returns a [`TlStatus`]; on failure a message is
//! kept per thread and can be read with [`tl_last_error`]. Objects are handed
//! out as opaque pointers and must be released with the matching `_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::slice;

use trendlab::features::{tof_features_of, CP_FEATURE_COUNT};
use trendlab::market_data::{load_quotes, QuoteSchema};
use trendlab::pipeline::trend_profit;
use trendlab::{cp_features, roc_auc, FeatureMatrix, GbdtModel, GbdtParams, QuoteSeries};

/// Number of changepoint features written by [`tl_cp_features`].
pub const TL_CP_FEATURE_COUNT: usize = 22;
/// Number of trend-or-flat features written by [`tl_tof_features`].
pub const TL_TOF_FEATURE_COUNT: usize = 5;

const _: () = assert!(TL_CP_FEATURE_COUNT == CP_FEATURE_COUNT);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    Model = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TlGbdtParams {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub reg_lambda: f64,
    pub reg_alpha: f64,
    pub subsample: f64,
    pub scale_pos_weight: f64,
    pub min_child_weight: f64,
    pub gamma: f64,
    pub seed: u64,
    /// 0 uses every core.
    pub threads: usize,
}

impl From<GbdtParams> for TlGbdtParams {
    fn from(p: GbdtParams) -> Self {
        Self {
            n_estimators: p.n_estimators,
            max_depth: p.max_depth,
            learning_rate: p.learning_rate,
            reg_lambda: p.reg_lambda,
            reg_alpha: p.reg_alpha,
            subsample: p.subsample,
            scale_pos_weight: p.scale_pos_weight,
            min_child_weight: p.min_child_weight,
            gamma: p.gamma,
            seed: p.seed,
            threads: p.threads,
        }
    }
}

impl From<TlGbdtParams> for GbdtParams {
    fn from(p: TlGbdtParams) -> Self {
        Self {
            n_estimators: p.n_estimators,
            max_depth: p.max_depth,
            learning_rate: p.learning_rate,
            reg_lambda: p.reg_lambda,
            reg_alpha: p.reg_alpha,
            subsample: p.subsample,
            scale_pos_weight: p.scale_pos_weight,
            min_child_weight: p.min_child_weight,
            gamma: p.gamma,
            seed: p.seed,
            threads: p.threads,
        }
    }
}

/// A trained gradient-boosted model.
pub struct TlModel {
    inner: GbdtModel,
}

/// Daily bars of one stock.
pub struct TlQuoteSeries {
    inner: QuoteSeries,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

struct Failure(TlStatus, String);

impl Failure {
    fn new(status: TlStatus, msg: impl ToString) -> Self {
        Self(status, msg.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure::new(TlStatus::NullPointer, format!("`{what}` is null"))
}

/// Runs `f`, turning errors and panics into a status plus a stored message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> TlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TlStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TlStatus::Panic
        }
    }
}

unsafe fn slice_of<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn str_of<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::new(TlStatus::InvalidArgument, format!("`{what}` is not UTF-8")))
}

unsafe fn matrix(x: *const f64, n_rows: usize, n_cols: usize) -> Result<FeatureMatrix, Failure> {
    let len = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| Failure::new(TlStatus::InvalidArgument, "matrix size overflows"))?;
    let data = slice_of(x, len, "x")?.to_vec();
    FeatureMatrix::new(n_rows, n_cols, data).map_err(|e| Failure::new(TlStatus::InvalidArgument, e))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

#[no_mangle]
pub extern "C" fn tl_gbdt_params_default() -> TlGbdtParams {
    GbdtParams::default().into()
}

/// Fits a model on the row-major `n_rows × n_cols` matrix `x` and labels
/// `y` (nonzero = positive).
///
/// # Safety
/// `x` must hold `n_rows·n_cols` values, `y` `n_rows` bytes; `params` and
/// `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn tl_model_fit(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    y: *const u8,
    params: *const TlGbdtParams,
    out: *mut *mut TlModel,
) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if params.is_null() {
            return Err(null("params"));
        }
        let x = matrix(x, n_rows, n_cols)?;
        let y: Vec<bool> = slice_of(y, n_rows, "y")?.iter().map(|&v| v != 0).collect();
        let model = GbdtModel::fit(&x, &y, &(*params).into()).map_err(|e| Failure::new(TlStatus::Model, e))?;
        *out = Box::into_raw(Box::new(TlModel { inner: model }));
        Ok(())
    })
}

/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_model_from_json(json: *const c_char, out: *mut *mut TlModel) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = GbdtModel::from_json(str_of(json, "json")?).map_err(|e| Failure::new(TlStatus::Parse, e))?;
        *out = Box::into_raw(Box::new(TlModel { inner: model }));
        Ok(())
    })
}

/// Serialises `model`; release the string with [`tl_string_free`].
///
/// # Safety
/// `model` must come from this library and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_model_to_json(model: *const TlModel, out: *mut *mut c_char) -> TlStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let json = model.inner.to_json().map_err(|e| Failure::new(TlStatus::Model, e))?;
        *out = CString::new(json)
            .map_err(|e| Failure::new(TlStatus::Model, e))?
            .into_raw();
        Ok(())
    })
}

/// Number of features the model expects, 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_model_n_features(model: *const TlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.n_features)
}

/// Number of trees, 0 for null.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_model_n_trees(model: *const TlModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.trees.len())
}

/// Writes one positive-class probability per row of `x` into `out`.
///
/// # Safety
/// `x` must hold `n_rows·n_cols` values and `out` room for `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn tl_model_predict_proba(
    model: *const TlModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> TlStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let x = matrix(x, n_rows, n_cols)?;
        let proba = model
            .inner
            .predict_proba(&x)
            .map_err(|e| Failure::new(TlStatus::InvalidArgument, e))?;
        if n_rows > 0 {
            if out.is_null() {
                return Err(null("out"));
            }
            slice::from_raw_parts_mut(out, n_rows).copy_from_slice(&proba);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_model_free(model: *mut TlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn tl_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Loads a quote CSV with the standard column names.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tl_quotes_load(path: *const c_char, out: *mut *mut TlQuoteSeries) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_of(path, "path")?;
        let series = load_quotes(Path::new(path), &QuoteSchema::default()).map_err(|e| {
            let status = if matches!(e, trendlab::market_data::MarketDataError::Io { .. }) {
                TlStatus::Io
            } else {
                TlStatus::Parse
            };
            Failure::new(status, e)
        })?;
        *out = Box::into_raw(Box::new(TlQuoteSeries { inner: series }));
        Ok(())
    })
}

/// Number of bars, 0 for null.
///
/// # Safety
/// `quotes` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn tl_quotes_len(quotes: *const TlQuoteSeries) -> usize {
    quotes.as_ref().map_or(0, |q| q.inner.len())
}

/// # Safety
/// `quotes` must be null or come from this library, and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tl_quotes_free(quotes: *mut TlQuoteSeries) {
    if !quotes.is_null() {
        drop(Box::from_raw(quotes));
    }
}

/// Changepoint features of day `t`. `*available` is set to false (and `out`
/// left untouched) when the ±5-day context does not fit in the series.
///
/// # Safety
/// `out` must have room for [`TL_CP_FEATURE_COUNT`] values.
#[no_mangle]
pub unsafe extern "C" fn tl_cp_features(
    quotes: *const TlQuoteSeries,
    t: usize,
    log_mode: bool,
    out: *mut f64,
    available: *mut bool,
) -> TlStatus {
    guard(|| {
        let quotes = quotes.as_ref().ok_or_else(|| null("quotes"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if available.is_null() {
            return Err(null("available"));
        }
        let f = cp_features(&quotes.inner, t, log_mode).map_err(|e| Failure::new(TlStatus::InvalidArgument, e))?;
        *available = f.is_some();
        if let Some(f) = f {
            slice::from_raw_parts_mut(out, TL_CP_FEATURE_COUNT).copy_from_slice(&f);
        }
        Ok(())
    })
}

/// Trend-or-flat features of rows `start..=end`, in the order reg_close,
/// close_r2, reg_vol, vol_r2, len_trend.
///
/// # Safety
/// `out` must have room for [`TL_TOF_FEATURE_COUNT`] values.
#[no_mangle]
pub unsafe extern "C" fn tl_tof_features(
    quotes: *const TlQuoteSeries,
    start: usize,
    end: usize,
    log_mode: bool,
    out: *mut f64,
) -> TlStatus {
    guard(|| {
        let quotes = quotes.as_ref().ok_or_else(|| null("quotes"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        if start > end || end >= quotes.inner.len() {
            return Err(Failure::new(
                TlStatus::InvalidArgument,
                format!("rows {start}..={end} outside a series of {} bars", quotes.inner.len()),
            ));
        }
        let f = tof_features_of(&quotes.inner, start, end, log_mode)
            .map_err(|e| Failure::new(TlStatus::InvalidArgument, e))?;
        slice::from_raw_parts_mut(out, TL_TOF_FEATURE_COUNT).copy_from_slice(&f.to_array());
        Ok(())
    })
}

/// ROC AUC of `scores` against `labels` (nonzero = positive).
///
/// # Safety
/// `scores` and `labels` must hold `n` values; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn tl_roc_auc(scores: *const f64, labels: *const u8, n: usize, out: *mut f64) -> TlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scores = slice_of(scores, n, "scores")?;
        let labels: Vec<bool> = slice_of(labels, n, "labels")?.iter().map(|&v| v != 0).collect();
        *out = roc_auc(scores, &labels).map_err(|e| Failure::new(TlStatus::InvalidArgument, e))?;
        Ok(())
    })
}

/// `direction · (exit − entry) / entry`, with direction +1 long, −1 short.
#[no_mangle]
pub extern "C" fn tl_trend_profit(entry_close: f64, exit_close: f64, direction: i8) -> f64 {
    trend_profit(entry_close, exit_close, direction)
}
