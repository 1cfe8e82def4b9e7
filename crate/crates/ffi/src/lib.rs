//! C ABI for the tagsync simulator.
//!
//! Opaque handles wrap the scenario config and run metrics; every entry
//! point returns a status code and the last error message is retrievable
//! per thread. The generated header lives at `include/tagsync.h`.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::os::raw::{c_char, c_int};
use std::path::Path;

use tagsync::sim::{run_scenario, RunMetrics, ScenarioConfig};
use tagsync::trace_io;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TagsyncStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    RunError = 4,
    IoError = 5,
    OutOfRange = 6,
}

/// One metrics row, mirrored for C consumers.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TagsyncMetricRow {
    pub step: u64,
    pub ref_time_us: u64,
    pub gamma_ticks: f64,
    pub rate_or_slope: f64,
    /// 1 if the protocol action completed, 0 if it was lost to power death.
    pub powered: c_int,
}

/// Summary over powered, post-warmup rows.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct TagsyncSummary {
    pub samples: u64,
    pub gaps: u64,
    pub mean_abs_gamma_ticks: f64,
    pub max_abs_gamma_ticks: f64,
    pub std_gamma_ticks: f64,
    pub mean_abs_gamma_ms: f64,
    pub max_abs_gamma_ms: f64,
    pub converged: c_int,
}

/// Opaque scenario configuration handle.
pub struct TagsyncConfig {
    inner: ScenarioConfig,
}

/// Opaque run-metrics handle.
pub struct TagsyncMetrics {
    inner: RunMetrics,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(message).expect("NULs stripped");
    });
}

/// Copy the last error message of the calling thread into `buf`
/// (NUL-terminated, truncated to `len`). Returns the full message length
/// in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (query mode).
#[no_mangle]
pub unsafe extern "C" fn tagsync_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let msg = slot.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            std::ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

unsafe fn cstr_arg<'a>(ptr: *const c_char) -> Result<&'a str, TagsyncStatus> {
    if ptr.is_null() {
        set_error("null string argument");
        return Err(TagsyncStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error("string argument is not valid UTF-8");
        TagsyncStatus::InvalidUtf8
    })
}

/// Parse a scenario config from its textual `key = value` form.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tagsync_config_parse(
    text: *const c_char,
    out: *mut *mut TagsyncConfig,
) -> TagsyncStatus {
    if out.is_null() {
        set_error("null output pointer");
        return TagsyncStatus::NullArgument;
    }
    let text = match cstr_arg(text) {
        Ok(t) => t,
        Err(status) => return status,
    };
    match trace_io::parse_config(text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TagsyncConfig { inner }));
            TagsyncStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            TagsyncStatus::ParseError
        }
    }
}

/// Load a scenario config from a file path.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tagsync_config_load(
    path: *const c_char,
    out: *mut *mut TagsyncConfig,
) -> TagsyncStatus {
    if out.is_null() {
        set_error("null output pointer");
        return TagsyncStatus::NullArgument;
    }
    let path = match cstr_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    let text = match std::fs::read_to_string(Path::new(path)) {
        Ok(t) => t,
        Err(e) => {
            set_error(format!("cannot read '{path}': {e}"));
            return TagsyncStatus::IoError;
        }
    };
    match trace_io::parse_config(&text) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TagsyncConfig { inner }));
            TagsyncStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            TagsyncStatus::ParseError
        }
    }
}

/// Override the scenario seed.
///
/// # Safety
/// `config` must be a live handle from `tagsync_config_parse`/`_load`.
#[no_mangle]
pub unsafe extern "C" fn tagsync_config_set_seed(
    config: *mut TagsyncConfig,
    seed: u64,
) -> TagsyncStatus {
    match config.as_mut() {
        Some(c) => {
            c.inner.seed = seed;
            TagsyncStatus::Ok
        }
        None => {
            set_error("null config handle");
            TagsyncStatus::NullArgument
        }
    }
}

/// Release a config handle. Null is a no-op.
///
/// # Safety
/// `config` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn tagsync_config_free(config: *mut TagsyncConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Run the configured scenario and hand back a metrics handle.
///
/// # Safety
/// `config` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tagsync_run_scenario(
    config: *const TagsyncConfig,
    out: *mut *mut TagsyncMetrics,
) -> TagsyncStatus {
    if out.is_null() {
        set_error("null output pointer");
        return TagsyncStatus::NullArgument;
    }
    let config = match config.as_ref() {
        Some(c) => c,
        None => {
            set_error("null config handle");
            return TagsyncStatus::NullArgument;
        }
    };
    match run_scenario(&config.inner) {
        Ok(inner) => {
            *out = Box::into_raw(Box::new(TagsyncMetrics { inner }));
            TagsyncStatus::Ok
        }
        Err(e) => {
            set_error(e.to_string());
            TagsyncStatus::RunError
        }
    }
}

/// Number of rows in the metrics series. Null handle reads as zero.
///
/// # Safety
/// `metrics` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn tagsync_metrics_len(metrics: *const TagsyncMetrics) -> usize {
    metrics.as_ref().map_or(0, |m| m.inner.series.len())
}

/// Copy row `index` into `out`.
///
/// # Safety
/// `metrics` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tagsync_metrics_row(
    metrics: *const TagsyncMetrics,
    index: usize,
    out: *mut TagsyncMetricRow,
) -> TagsyncStatus {
    let metrics = match metrics.as_ref() {
        Some(m) => m,
        None => {
            set_error("null metrics handle");
            return TagsyncStatus::NullArgument;
        }
    };
    if out.is_null() {
        set_error("null output pointer");
        return TagsyncStatus::NullArgument;
    }
    match metrics.inner.series.get(index) {
        Some(row) => {
            *out = TagsyncMetricRow {
                step: row.step,
                ref_time_us: row.ref_time_us,
                gamma_ticks: row.gamma_ticks,
                rate_or_slope: row.rate_or_slope,
                powered: c_int::from(row.powered),
            };
            TagsyncStatus::Ok
        }
        None => {
            set_error(format!(
                "row index {index} out of range (len {})",
                metrics.inner.series.len()
            ));
            TagsyncStatus::OutOfRange
        }
    }
}

/// Copy the run summary into `out`.
///
/// # Safety
/// `metrics` must be a live handle; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tagsync_metrics_summary(
    metrics: *const TagsyncMetrics,
    out: *mut TagsyncSummary,
) -> TagsyncStatus {
    let metrics = match metrics.as_ref() {
        Some(m) => m,
        None => {
            set_error("null metrics handle");
            return TagsyncStatus::NullArgument;
        }
    };
    if out.is_null() {
        set_error("null output pointer");
        return TagsyncStatus::NullArgument;
    }
    let s = &metrics.inner.summary;
    *out = TagsyncSummary {
        samples: s.samples,
        gaps: s.gaps,
        mean_abs_gamma_ticks: s.mean_abs_gamma_ticks,
        max_abs_gamma_ticks: s.max_abs_gamma_ticks,
        std_gamma_ticks: s.std_gamma_ticks,
        mean_abs_gamma_ms: s.mean_abs_gamma_ms,
        max_abs_gamma_ms: s.max_abs_gamma_ms,
        converged: c_int::from(s.converged),
    };
    TagsyncStatus::Ok
}

/// Write the metrics series to `path` in the CSV format.
///
/// # Safety
/// `metrics` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tagsync_metrics_write_csv(
    metrics: *const TagsyncMetrics,
    path: *const c_char,
) -> TagsyncStatus {
    let metrics = match metrics.as_ref() {
        Some(m) => m,
        None => {
            set_error("null metrics handle");
            return TagsyncStatus::NullArgument;
        }
    };
    let path = match cstr_arg(path) {
        Ok(p) => p,
        Err(status) => return status,
    };
    match std::fs::write(path, trace_io::write_metrics(&metrics.inner)) {
        Ok(()) => TagsyncStatus::Ok,
        Err(e) => {
            set_error(format!("cannot write '{path}': {e}"));
            TagsyncStatus::IoError
        }
    }
}

/// Release a metrics handle. Null is a no-op.
///
/// # Safety
/// `metrics` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn tagsync_metrics_free(metrics: *mut TagsyncMetrics) {
    if !metrics.is_null() {
        drop(Box::from_raw(metrics));
    }
}

/// Theoretical integral-gain upper bound `2 / (B * f)`; NaN when the
/// arguments are out of domain.
#[no_mangle]
pub extern "C" fn tagsync_convergence_bound(event_period_s: f64, clock_hz: f64) -> f64 {
    if event_period_s <= 0.0 || clock_hz <= 0.0 {
        return f64::NAN;
    }
    tagsync::sync::convergence_bound(event_period_s, clock_hz)
}
