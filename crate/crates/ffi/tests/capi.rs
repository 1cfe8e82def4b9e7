//! Exercises the C ABI the way a foreign caller would: raw pointers,
//! status codes and the thread-local error message.

use std::ffi::{CStr, CString};
use std::os::raw::c_char;
use std::ptr;
use tagsync_ffi::*;

const CONFIG_TEXT: &str = "engine = event_based\n\
    duration_s = 15\n\
    burst_interval_s = 0.25\n\
    gain = 1e-4\n\
    mu_e = 7086\n\
    seed = 3\n\
    warmup_s = 2\n\
    oscillator.static_drift = 0.018\n\
    oscillator.f_min_hz = 30500\n\
    oscillator.f_max_hz = 32000\n";

fn last_error() -> String {
    let mut buf = [0u8; 512];
    unsafe {
        tagsync_last_error_message(buf.as_mut_ptr() as *mut c_char, buf.len());
        CStr::from_ptr(buf.as_ptr() as *const c_char)
            .to_string_lossy()
            .into_owned()
    }
}

#[test]
fn parse_run_inspect_and_free() {
    unsafe {
        let text = CString::new(CONFIG_TEXT).unwrap();
        let mut config: *mut TagsyncConfig = ptr::null_mut();
        assert_eq!(
            tagsync_config_parse(text.as_ptr(), &mut config),
            TagsyncStatus::Ok
        );
        assert!(!config.is_null());
        assert_eq!(tagsync_config_set_seed(config, 3), TagsyncStatus::Ok);

        let mut metrics: *mut TagsyncMetrics = ptr::null_mut();
        assert_eq!(
            tagsync_run_scenario(config, &mut metrics),
            TagsyncStatus::Ok
        );
        let len = tagsync_metrics_len(metrics);
        assert!(len > 40, "15 s at 4 bursts/s should emit many rows, got {len}");

        let mut row = TagsyncMetricRow {
            step: 0,
            ref_time_us: 0,
            gamma_ticks: 0.0,
            rate_or_slope: 0.0,
            powered: 0,
        };
        assert_eq!(tagsync_metrics_row(metrics, 0, &mut row), TagsyncStatus::Ok);
        assert_eq!(row.powered, 1);
        assert_eq!(
            tagsync_metrics_row(metrics, len, &mut row),
            TagsyncStatus::OutOfRange
        );
        assert!(last_error().contains("out of range"));

        let mut summary = TagsyncSummary {
            samples: 0,
            gaps: 0,
            mean_abs_gamma_ticks: 0.0,
            max_abs_gamma_ticks: 0.0,
            std_gamma_ticks: 0.0,
            mean_abs_gamma_ms: 0.0,
            max_abs_gamma_ms: 0.0,
            converged: 0,
        };
        assert_eq!(
            tagsync_metrics_summary(metrics, &mut summary),
            TagsyncStatus::Ok
        );
        assert!(summary.samples > 0);
        assert_eq!(summary.converged, 1);
        assert!(summary.mean_abs_gamma_ticks > 0.0);

        let dir = tempfile::tempdir().unwrap();
        let out_path = dir.path().join("ffi.csv");
        let c_path = CString::new(out_path.to_str().unwrap()).unwrap();
        assert_eq!(
            tagsync_metrics_write_csv(metrics, c_path.as_ptr()),
            TagsyncStatus::Ok
        );
        let written = std::fs::read_to_string(&out_path).unwrap();
        assert!(written.starts_with("step,ref_time_us,gamma_ticks,rate_or_slope,powered\n"));

        tagsync_metrics_free(metrics);
        tagsync_config_free(config);
    }
}

#[test]
fn load_from_file_matches_parse() {
    unsafe {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scenario.cfg");
        std::fs::write(&path, CONFIG_TEXT).unwrap();
        let c_path = CString::new(path.to_str().unwrap()).unwrap();
        let mut loaded: *mut TagsyncConfig = ptr::null_mut();
        assert_eq!(
            tagsync_config_load(c_path.as_ptr(), &mut loaded),
            TagsyncStatus::Ok
        );

        let text = CString::new(CONFIG_TEXT).unwrap();
        let mut parsed: *mut TagsyncConfig = ptr::null_mut();
        assert_eq!(
            tagsync_config_parse(text.as_ptr(), &mut parsed),
            TagsyncStatus::Ok
        );

        let mut m1: *mut TagsyncMetrics = ptr::null_mut();
        let mut m2: *mut TagsyncMetrics = ptr::null_mut();
        assert_eq!(tagsync_run_scenario(loaded, &mut m1), TagsyncStatus::Ok);
        assert_eq!(tagsync_run_scenario(parsed, &mut m2), TagsyncStatus::Ok);
        let len = tagsync_metrics_len(m1);
        assert_eq!(len, tagsync_metrics_len(m2));
        for k in [0usize, len / 2, len - 1] {
            let mut a = std::mem::zeroed::<TagsyncMetricRow>();
            let mut b = std::mem::zeroed::<TagsyncMetricRow>();
            assert_eq!(tagsync_metrics_row(m1, k, &mut a), TagsyncStatus::Ok);
            assert_eq!(tagsync_metrics_row(m2, k, &mut b), TagsyncStatus::Ok);
            assert_eq!(a.gamma_ticks.to_bits(), b.gamma_ticks.to_bits());
        }
        tagsync_metrics_free(m1);
        tagsync_metrics_free(m2);
        tagsync_config_free(loaded);
        tagsync_config_free(parsed);
    }
}

#[test]
fn error_paths_set_codes_and_messages() {
    unsafe {
        // Null output pointer.
        let text = CString::new("engine = event_based\n").unwrap();
        assert_eq!(
            tagsync_config_parse(text.as_ptr(), ptr::null_mut()),
            TagsyncStatus::NullArgument
        );

        // Parse failure names the offending key.
        let bad = CString::new("nonsense_key = 12\n").unwrap();
        let mut config: *mut TagsyncConfig = ptr::null_mut();
        assert_eq!(
            tagsync_config_parse(bad.as_ptr(), &mut config),
            TagsyncStatus::ParseError
        );
        assert!(last_error().contains("nonsense_key"), "{}", last_error());

        // Missing file.
        let missing = CString::new("/no/such/dir/scenario.cfg").unwrap();
        let status = tagsync_config_load(missing.as_ptr(), &mut config);
        assert!(status == TagsyncStatus::IoError || status == TagsyncStatus::ParseError);

        // Null handles.
        assert_eq!(
            tagsync_config_set_seed(ptr::null_mut(), 1),
            TagsyncStatus::NullArgument
        );
        let mut metrics: *mut TagsyncMetrics = ptr::null_mut();
        assert_eq!(
            tagsync_run_scenario(ptr::null(), &mut metrics),
            TagsyncStatus::NullArgument
        );
        assert_eq!(tagsync_metrics_len(ptr::null()), 0);

        // Frees accept null.
        tagsync_config_free(ptr::null_mut());
        tagsync_metrics_free(ptr::null_mut());
    }
}

#[test]
fn convergence_bound_matches_published_value() {
    let bound = tagsync_convergence_bound(0.22676, 32000.0);
    assert!((bound - 0.000276).abs() < 1e-6);
    assert!(tagsync_convergence_bound(-1.0, 32000.0).is_nan());
    assert!(tagsync_convergence_bound(0.2, 0.0).is_nan());
}
