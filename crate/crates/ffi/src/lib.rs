//! C ABI over the multilevel basket-loss estimator.
//!
//! The surface is deliberately small: parse a JSON run configuration into an
//! opaque [`BmcConfig`], run the adaptive estimator to an opaque
//! [`BmcResult`], and read the result back through scalar accessors or a
//! JSON dump. Every fallible call returns a [`BmcStatus`]; on failure a
//! human-readable explanation is kept in thread-local storage and can be
//! fetched with [`bmc_last_error_message`].
//!
//! The generated header lands in `include/basketmc.h` at build time.
//! Ownership is explicit: anything handed out as a pointer has a matching
//! `bmc_*_free` function, and nothing is freed implicitly.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use basketmc::config::RunConfig;
use basketmc::mlmc::{run_adaptive, MlmcResult};
use basketmc::Error;

/// Status code returned by every fallible C-ABI call.
///
/// The numeric values of `Validation` and `Budget` match the CLI exit codes
/// for the same failures, so callers can share handling between the two
/// entry points.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BmcStatus {
    /// The call succeeded.
    Ok = 0,
    /// Filesystem or serialization failure.
    Io = 1,
    /// The configuration or an argument failed validation.
    Validation = 2,
    /// The sampling cost budget was exhausted before the target accuracy.
    Budget = 3,
    /// A required pointer argument was null.
    NullArgument = 4,
    /// A string argument was not valid UTF-8.
    Utf8 = 5,
    /// The estimator panicked; the handle state is unchanged.
    Panic = 6,
}

/// Per-level statistics of a finished run, mirrored into a C layout.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct BmcLevelStats {
    /// Level index `l`, from 0 to the configured maximum.
    pub level: u32,
    /// Samples drawn at this level.
    pub n: u64,
    /// Sample mean of the level term.
    pub mean: f64,
    /// Per-sample variance estimate of the level term.
    pub variance: f64,
    /// Cost of one sample at this level.
    pub cost_per_sample: f64,
}

/// Opaque run configuration; create with [`bmc_config_from_json`], release
/// with [`bmc_config_free`].
pub struct BmcConfig {
    inner: RunConfig,
}

/// Opaque run result; produced by [`bmc_run_estimate`], released with
/// [`bmc_result_free`].
pub struct BmcResult {
    inner: MlmcResult,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let stored = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::default());
}

fn fail(status: BmcStatus, message: &str) -> BmcStatus {
    set_last_error(message);
    status
}

fn fail_with(err: &Error) -> BmcStatus {
    let status = match err.exit_code() {
        2 => BmcStatus::Validation,
        3 => BmcStatus::Budget,
        _ => BmcStatus::Io,
    };
    fail(status, &err.to_string())
}

/// Message describing the most recent failure on the calling thread.
///
/// The pointer stays valid until the next C-ABI call from the same thread;
/// after a successful call it points at an empty string. The library keeps
/// ownership — do not free it.
#[no_mangle]
pub extern "C" fn bmc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Parses and validates a JSON run configuration.
///
/// On `Ok`, `*out` owns a new configuration handle.
///
/// # Safety
///
/// `json` must point at a NUL-terminated string and `out` at a writable
/// pointer slot; both must be non-null.
#[no_mangle]
pub unsafe extern "C" fn bmc_config_from_json(
    json: *const c_char,
    out: *mut *mut BmcConfig,
) -> BmcStatus {
    clear_last_error();
    if json.is_null() || out.is_null() {
        return fail(BmcStatus::NullArgument, "json and out must be non-null");
    }
    let text = match CStr::from_ptr(json).to_str() {
        Ok(text) => text,
        Err(_) => return fail(BmcStatus::Utf8, "configuration JSON is not valid UTF-8"),
    };
    match RunConfig::from_json(text).and_then(|inner| {
        inner.validate()?;
        Ok(inner)
    }) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(BmcConfig { inner }));
            BmcStatus::Ok
        }
        Err(err) => fail_with(&err),
    }
}

/// Overrides the configuration's RNG seed, like the CLI `--seed` flag.
///
/// # Safety
///
/// `config` must be a live handle from [`bmc_config_from_json`] or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_config_set_seed(config: *mut BmcConfig, seed: u64) -> BmcStatus {
    clear_last_error();
    match config.as_mut() {
        Some(config) => {
            config.inner.seed = seed;
            BmcStatus::Ok
        }
        None => fail(BmcStatus::NullArgument, "config must be non-null"),
    }
}

/// Releases a configuration handle. Null is a no-op.
///
/// # Safety
///
/// `config` must be a handle from [`bmc_config_from_json`] that has not
/// already been freed, or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_config_free(config: *mut BmcConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Runs the adaptive multilevel estimator described by `config`.
///
/// The run is deterministic in the configuration: the same handle (same
/// seed included) always produces bit-identical results. On `Ok`, `*out`
/// owns a new result handle.
///
/// # Safety
///
/// `config` must be a live configuration handle and `out` a writable
/// pointer slot; both must be non-null.
#[no_mangle]
pub unsafe extern "C" fn bmc_run_estimate(
    config: *const BmcConfig,
    out: *mut *mut BmcResult,
) -> BmcStatus {
    clear_last_error();
    let Some(config) = config.as_ref() else {
        return fail(BmcStatus::NullArgument, "config must be non-null");
    };
    if out.is_null() {
        return fail(BmcStatus::NullArgument, "out must be non-null");
    }
    let run = catch_unwind(AssertUnwindSafe(|| -> Result<MlmcResult, Error> {
        let config = &config.inner;
        config.validate()?;
        let model = config.build_model()?;
        let payoff = config.build_payoff()?;
        let geometry = config.build_geometry()?;
        run_adaptive(
            &model,
            &payoff,
            config.estimator,
            &geometry,
            &config.adaptive_options(),
        )
    }));
    match run {
        Ok(Ok(inner)) => {
            *out = Box::into_raw(Box::new(BmcResult { inner }));
            BmcStatus::Ok
        }
        Ok(Err(err)) => fail_with(&err),
        Err(_) => fail(BmcStatus::Panic, "estimator panicked"),
    }
}

/// Telescoped estimate of the expected payoff. NaN if `result` is null.
///
/// # Safety
///
/// `result` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_estimate(result: *const BmcResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.estimate)
}

/// Standard error of the estimate. NaN if `result` is null.
///
/// # Safety
///
/// `result` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_standard_error(result: *const BmcResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.standard_error)
}

/// Total sampling cost actually spent. NaN if `result` is null.
///
/// # Safety
///
/// `result` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_total_cost(result: *const BmcResult) -> f64 {
    result.as_ref().map_or(f64::NAN, |r| r.inner.total_cost)
}

/// Number of levels in the run, i.e. the valid index range for
/// [`bmc_result_level`]. Zero if `result` is null.
///
/// # Safety
///
/// `result` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_num_levels(result: *const BmcResult) -> u64 {
    result.as_ref().map_or(0, |r| r.inner.levels.len() as u64)
}

/// Copies the statistics of one level into `*out`.
///
/// # Safety
///
/// `result` must be a live result handle and `out` a writable
/// [`BmcLevelStats`] slot; both must be non-null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_level(
    result: *const BmcResult,
    index: u64,
    out: *mut BmcLevelStats,
) -> BmcStatus {
    clear_last_error();
    let Some(result) = result.as_ref() else {
        return fail(BmcStatus::NullArgument, "result must be non-null");
    };
    if out.is_null() {
        return fail(BmcStatus::NullArgument, "out must be non-null");
    }
    let Some(stats) = result.inner.levels.get(index as usize) else {
        return fail(
            BmcStatus::Validation,
            &format!(
                "level index {index} out of range (run has {} levels)",
                result.inner.levels.len()
            ),
        );
    };
    *out = BmcLevelStats {
        level: stats.level,
        n: stats.n,
        mean: stats.mean,
        variance: stats.variance,
        cost_per_sample: stats.cost_per_sample,
    };
    BmcStatus::Ok
}

/// Serializes the full result (estimate, allocation, per-level statistics)
/// to a JSON string.
///
/// On `Ok`, `*out` owns a NUL-terminated string; release it with
/// [`bmc_string_free`].
///
/// # Safety
///
/// `result` must be a live result handle and `out` a writable pointer
/// slot; both must be non-null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_to_json(
    result: *const BmcResult,
    out: *mut *mut c_char,
) -> BmcStatus {
    clear_last_error();
    let Some(result) = result.as_ref() else {
        return fail(BmcStatus::NullArgument, "result must be non-null");
    };
    if out.is_null() {
        return fail(BmcStatus::NullArgument, "out must be non-null");
    }
    let text = match serde_json::to_string_pretty(&result.inner) {
        Ok(text) => text,
        Err(err) => return fail(BmcStatus::Io, &err.to_string()),
    };
    match CString::new(text) {
        Ok(text) => {
            *out = text.into_raw();
            BmcStatus::Ok
        }
        Err(err) => fail(BmcStatus::Io, &err.to_string()),
    }
}

/// Releases a string returned by [`bmc_result_to_json`]. Null is a no-op.
///
/// # Safety
///
/// `string` must have been returned by this library and not already freed,
/// or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_string_free(string: *mut c_char) {
    if !string.is_null() {
        drop(CString::from_raw(string));
    }
}

/// Releases a result handle. Null is a no-op.
///
/// # Safety
///
/// `result` must be a handle from [`bmc_run_estimate`] that has not already
/// been freed, or null.
#[no_mangle]
pub unsafe extern "C" fn bmc_result_free(result: *mut BmcResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}
