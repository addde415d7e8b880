//! C ABI over the foodsec kernels and pipeline.
//!
//! Every function returns a [`FoodsecStatus`]; results go through out-pointers.
//! On failure a message is kept per thread and can be read with
//! [`foodsec_last_error`]. Handles are opaque and must be released with their
//! `_free` function. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::sync::OnceLock;

use foodsec::config::ConfigBuilder;
use foodsec::correlation::{fisher_ci, pearson, pearson_p};
use foodsec::features::social_diversity;
use foodsec::model::{fit_model, RegressionModel};
use foodsec::pipeline::{run_subcommand, Command};
use foodsec::survey::{
    classify_fcs, food_consumption_score, multidimensional_poverty_index, FcsClass, FoodGroupWeights,
};
use foodsec::Error;

/// Result codes. Zero is success; everything else is negative.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoodsecStatus {
    Ok = 0,
    NullPointer = -1,
    InvalidArgument = -2,
    /// The statistic is not defined for this input (e.g. zero variance).
    Undefined = -3,
    Config = -4,
    Data = -5,
    Io = -6,
    Internal = -7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoodsecFcsClass {
    Poor = 0,
    Borderline = 1,
    Acceptable = 2,
}

/// A fitted polynomial-basis model.
pub struct FoodsecModel {
    inner: RegressionModel,
}

/// Layered run configuration for [`foodsec_run`].
pub struct FoodsecConfig {
    builder: ConfigBuilder,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(s));
}

fn fail(status: FoodsecStatus, msg: impl Into<String>) -> FoodsecStatus {
    set_error(msg);
    status
}

fn from_error(e: &Error) -> FoodsecStatus {
    let status = match e {
        Error::Io { .. } => FoodsecStatus::Io,
        _ => match e.exit_code() {
            1 => FoodsecStatus::Config,
            2 => FoodsecStatus::Data,
            _ => FoodsecStatus::Internal,
        },
    };
    fail(status, e.to_string())
}

fn guard(f: impl FnOnce() -> FoodsecStatus) -> FoodsecStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(FoodsecStatus::Internal, "panic inside foodsec"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize) -> Option<&'a [T]> {
    if n == 0 {
        Some(&[])
    } else if p.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(p, n))
    }
}

unsafe fn c_str<'a>(p: *const c_char) -> Result<&'a str, FoodsecStatus> {
    if p.is_null() {
        return Err(fail(FoodsecStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(FoodsecStatus::InvalidArgument, "string is not UTF-8"))
}

macro_rules! out {
    ($p:expr) => {
        if $p.is_null() {
            return fail(FoodsecStatus::NullPointer, "null output pointer");
        }
    };
}

/// Message for the last failure on this thread, or NULL. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn foodsec_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn foodsec_version() -> *const c_char {
    static V: OnceLock<CString> = OnceLock::new();
    V.get_or_init(|| CString::new(env!("CARGO_PKG_VERSION")).unwrap())
        .as_ptr()
}

/// Pearson correlation of `x[0..n]` and `y[0..n]`.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_pearson(x: *const f64, y: *const f64, n: usize, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let (Some(x), Some(y)) = (slice(x, n), slice(y, n)) else {
            return fail(FoodsecStatus::NullPointer, "null input array");
        };
        match pearson(x, y) {
            Some(r) => {
                *out = r;
                FoodsecStatus::Ok
            }
            None => fail(
                FoodsecStatus::Undefined,
                "correlation undefined (n < 2 or zero variance)",
            ),
        }
    })
}

/// Two-sided p-value of correlation `r` over `n` pairs.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_pearson_p(r: f64, n: usize, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        if r.abs() > 1.0 {
            return fail(FoodsecStatus::InvalidArgument, "|r| must not exceed 1");
        }
        match pearson_p(r, n) {
            Some(p) => {
                *out = p;
                FoodsecStatus::Ok
            }
            None => fail(FoodsecStatus::Undefined, "p-value needs n >= 3 and a finite r"),
        }
    })
}

/// Fisher-z confidence interval of `r` at `level` (e.g. 0.95).
///
/// # Safety
/// `lo` and `hi` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_fisher_ci(r: f64, n: usize, level: f64, lo: *mut f64, hi: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(lo);
        out!(hi);
        if r.abs() > 1.0 || !(level > 0.0 && level < 1.0) {
            return fail(FoodsecStatus::InvalidArgument, "need |r| <= 1 and level in (0, 1)");
        }
        match fisher_ci(r, n, level) {
            Some((a, b)) => {
                *lo = a;
                *hi = b;
                FoodsecStatus::Ok
            }
            None => fail(FoodsecStatus::Undefined, "interval needs n >= 4 and a finite r"),
        }
    })
}

/// Normalized Shannon entropy of contact volumes.
///
/// # Safety
/// `volumes` must point to `n` readable values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_social_diversity(volumes: *const u64, n: usize, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let Some(v) = slice(volumes, n) else {
            return fail(FoodsecStatus::NullPointer, "null volumes");
        };
        match social_diversity(v) {
            Some(d) => {
                *out = d;
                FoodsecStatus::Ok
            }
            None => fail(FoodsecStatus::Undefined, "no contacts with positive volume"),
        }
    })
}

fn default_groups() -> &'static (FoodGroupWeights, Vec<CString>) {
    static G: OnceLock<(FoodGroupWeights, Vec<CString>)> = OnceLock::new();
    G.get_or_init(|| {
        let w = FoodGroupWeights::default();
        let names = w.weights.keys().map(|k| CString::new(k.as_str()).unwrap()).collect();
        (w, names)
    })
}

/// Number of food groups in the default FCS weighting.
#[no_mangle]
pub extern "C" fn foodsec_fcs_group_count() -> usize {
    default_groups().1.len()
}

/// Name of default food group `i` (the order [`foodsec_fcs`] expects), or NULL.
#[no_mangle]
pub extern "C" fn foodsec_fcs_group_name(i: usize) -> *const c_char {
    default_groups().1.get(i).map_or(ptr::null(), |s| s.as_ptr())
}

/// Food consumption score under the default weights. `days[i]` is the 7-day
/// frequency of group `foodsec_fcs_group_name(i)`; `n` must equal the group count.
///
/// # Safety
/// `days` must point to `n` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_fcs(days: *const u8, n: usize, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let (w, names) = default_groups();
        if n != names.len() {
            return fail(
                FoodsecStatus::InvalidArgument,
                format!("expected {} groups, got {n}", names.len()),
            );
        }
        let Some(d) = slice(days, n) else {
            return fail(FoodsecStatus::NullPointer, "null frequencies");
        };
        let freqs = w.weights.keys().cloned().zip(d.iter().copied()).collect();
        match food_consumption_score(&freqs, w) {
            Ok(s) => {
                *out = s;
                FoodsecStatus::Ok
            }
            Err(e) => fail(FoodsecStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// FCS class with inclusive upper bounds `poor_max` and `borderline_max`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_classify_fcs(
    score: f64,
    poor_max: f64,
    borderline_max: f64,
    out: *mut FoodsecFcsClass,
) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let w = match FoodGroupWeights::default().with_thresholds(poor_max, borderline_max) {
            Ok(w) => w,
            Err(e) => return fail(FoodsecStatus::InvalidArgument, e.to_string()),
        };
        *out = match classify_fcs(score, &w) {
            FcsClass::Poor => FoodsecFcsClass::Poor,
            FcsClass::Borderline => FoodsecFcsClass::Borderline,
            FcsClass::Acceptable => FoodsecFcsClass::Acceptable,
        };
        FoodsecStatus::Ok
    })
}

/// MPI = headcount * intensity, both in [0, 1].
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_mpi(headcount: f64, intensity: f64, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        match multidimensional_poverty_index(headcount, intensity) {
            Ok(m) => {
                *out = m;
                FoodsecStatus::Ok
            }
            Err(e) => fail(FoodsecStatus::InvalidArgument, e.to_string()),
        }
    })
}

fn cell(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Fits `y` on a degree-1 or degree-2 polynomial basis of `k` variables.
/// `x` is row-major `n x k`. NaN marks a missing value; such rows are dropped.
///
/// # Safety
/// `x` must hold `n * k` doubles, `y` must hold `n`; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_fit(
    x: *const f64,
    y: *const f64,
    n: usize,
    k: usize,
    degree: u8,
    out: *mut *mut FoodsecModel,
) -> FoodsecStatus {
    guard(|| {
        out!(out);
        *out = ptr::null_mut();
        let Some(len) = n.checked_mul(k) else {
            return fail(FoodsecStatus::InvalidArgument, "n * k overflows");
        };
        let (Some(x), Some(y)) = (slice(x, len), slice(y, n)) else {
            return fail(FoodsecStatus::NullPointer, "null input array");
        };
        if k == 0 {
            return fail(FoodsecStatus::InvalidArgument, "need at least one variable");
        }
        let names: Vec<String> = (0..k).map(|j| format!("x{j}")).collect();
        let rows: Vec<Vec<Option<f64>>> = x.chunks(k).map(|r| r.iter().map(|&v| cell(v)).collect()).collect();
        let ys: Vec<Option<f64>> = y.iter().map(|&v| cell(v)).collect();
        match fit_model("y", &names, &rows, &ys, degree) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(FoodsecModel { inner: m }));
                FoodsecStatus::Ok
            }
            Err(e) => from_error(&Error::Model(e)),
        }
    })
}

/// Prediction for one observation of `k` variables.
///
/// # Safety
/// `model` must come from [`foodsec_model_fit`]; `x` must hold `k` doubles.
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_predict(
    model: *const FoodsecModel,
    x: *const f64,
    k: usize,
    out: *mut f64,
) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let Some(m) = model.as_ref() else {
            return fail(FoodsecStatus::NullPointer, "null model");
        };
        if k != m.inner.variables.len() {
            return fail(
                FoodsecStatus::InvalidArgument,
                format!("model has {} variables", m.inner.variables.len()),
            );
        }
        let Some(x) = slice(x, k) else {
            return fail(FoodsecStatus::NullPointer, "null input");
        };
        *out = m.inner.predict_slice(x);
        FoodsecStatus::Ok
    })
}

/// Correlation between fitted and observed values.
///
/// # Safety
/// `model` must come from [`foodsec_model_fit`].
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_fit_r(model: *const FoodsecModel, out: *mut f64) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let Some(m) = model.as_ref() else {
            return fail(FoodsecStatus::NullPointer, "null model");
        };
        *out = m.inner.fit_r;
        FoodsecStatus::Ok
    })
}

/// Number of basis terms, intercept included.
///
/// # Safety
/// `model` must come from [`foodsec_model_fit`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_n_terms(model: *const FoodsecModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.terms.len())
}

/// Copies raw-scale coefficients (one per term) into `out[0..len]`.
///
/// # Safety
/// `model` must come from [`foodsec_model_fit`]; `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_coefficients(
    model: *const FoodsecModel,
    out: *mut f64,
    len: usize,
) -> FoodsecStatus {
    guard(|| {
        out!(out);
        let Some(m) = model.as_ref() else {
            return fail(FoodsecStatus::NullPointer, "null model");
        };
        let c = &m.inner.coefficients_raw;
        if len < c.len() {
            return fail(
                FoodsecStatus::InvalidArgument,
                format!("need room for {} coefficients", c.len()),
            );
        }
        std::slice::from_raw_parts_mut(out, c.len()).copy_from_slice(c);
        FoodsecStatus::Ok
    })
}

/// # Safety
/// `model` must come from [`foodsec_model_fit`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn foodsec_model_free(model: *mut FoodsecModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// New configuration holding only defaults.
#[no_mangle]
pub extern "C" fn foodsec_config_new() -> *mut FoodsecConfig {
    Box::into_raw(Box::new(FoodsecConfig {
        builder: ConfigBuilder::new(),
    }))
}

/// Layers a TOML config file over the current settings.
///
/// # Safety
/// `config` must come from [`foodsec_config_new`]; `path` must be a C string.
#[no_mangle]
pub unsafe extern "C" fn foodsec_config_load(config: *mut FoodsecConfig, path: *const c_char) -> FoodsecStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(FoodsecStatus::NullPointer, "null config");
        };
        let path = match c_str(path) {
            Ok(p) => PathBuf::from(p),
            Err(s) => return s,
        };
        match std::mem::take(&mut c.builder).file(&path) {
            Ok(b) => {
                c.builder = b;
                FoodsecStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// Sets one key from a `key=value` string, with the value written as in the config file.
///
/// # Safety
/// `config` must come from [`foodsec_config_new`]; `assignment` must be a C string.
#[no_mangle]
pub unsafe extern "C" fn foodsec_config_set(config: *mut FoodsecConfig, assignment: *const c_char) -> FoodsecStatus {
    guard(|| {
        let Some(c) = config.as_mut() else {
            return fail(FoodsecStatus::NullPointer, "null config");
        };
        let a = match c_str(assignment) {
            Ok(a) => a,
            Err(s) => return s,
        };
        match c.builder.clone().set_raw(a) {
            Ok(b) => {
                c.builder = b;
                FoodsecStatus::Ok
            }
            Err(e) => from_error(&e),
        }
    })
}

/// # Safety
/// `config` must come from [`foodsec_config_new`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn foodsec_config_free(config: *mut FoodsecConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs a pipeline subcommand (`synth`, `features`, ..., `all`) with `config`.
/// `FOODSEC_*` environment variables are not consulted.
///
/// # Safety
/// `config` must come from [`foodsec_config_new`]; `command` must be a C string.
#[no_mangle]
pub unsafe extern "C" fn foodsec_run(config: *const FoodsecConfig, command: *const c_char) -> FoodsecStatus {
    guard(|| {
        let Some(c) = config.as_ref() else {
            return fail(FoodsecStatus::NullPointer, "null config");
        };
        let cmd: Command = match c_str(command).map(str::parse) {
            Ok(Ok(cmd)) => cmd,
            Ok(Err(e)) => return from_error(&e),
            Err(s) => return s,
        };
        match c.builder.clone().build().and_then(|cfg| run_subcommand(cmd, &cfg)) {
            Ok(_) => FoodsecStatus::Ok,
            Err(e) => from_error(&e),
        }
    })
}
