//! File formats: the two trace CSV schemas, the metrics CSV, and the flat
//! `key = value` scenario-config format.
//!
//! Traces let the sync engines replay captured timestamp logs exactly as
//! the offline host-side pipeline did. All formats are plain text with
//! byte-stable number formatting.

use std::collections::HashSet;

use thiserror::Error;

use crate::power::{NvSnapshot, PowerMode};
use crate::sim::{Engine, InvalidConfig, MetricStep, RunMetrics, RunSummary, ScenarioConfig};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TraceError {
    #[error("parse error at line {line}, column {column}: {reason}")]
    Parse {
        line: usize,
        column: usize,
        reason: String,
    },
    #[error("monotonicity violation at line {line}: {reason}")]
    Monotonicity { line: usize, reason: String },
}

impl TraceError {
    fn parse(line: usize, column: usize, reason: impl Into<String>) -> Self {
        TraceError::Parse {
            line,
            column,
            reason: reason.into(),
        }
    }
}

/// Ordered (C_w ticks, C_r us) pairs with strictly increasing reference time.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairTrace {
    pub rows: Vec<(u64, u64)>,
}

/// Ordered per-burst endpoint readings of the tag's local clock.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BurstTrace {
    pub rows: Vec<BurstRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BurstRow {
    pub burst_index: u64,
    pub cw_first: u64,
    pub cw_last: u64,
}

pub const PAIR_TRACE_HEADER: &str = "cw_ticks,cr_us";
pub const BURST_TRACE_HEADER: &str = "burst_index,cw_first,cw_last";
pub const METRICS_HEADER: &str = "step,ref_time_us,gamma_ticks,rate_or_slope,powered";

fn utf8(bytes: &[u8]) -> Result<&str, TraceError> {
    std::str::from_utf8(bytes).map_err(|e| TraceError::parse(0, e.valid_up_to(), "not UTF-8 text"))
}

fn parse_u64(field: &str, line_no: usize, column: usize) -> Result<u64, TraceError> {
    field.trim().parse::<u64>().map_err(|_| {
        TraceError::parse(
            line_no,
            column,
            format!("expected unsigned integer, got '{}'", field.trim()),
        )
    })
}

/// Split one CSV line into exactly `n` fields, reporting the 1-based
/// column offset of each field start.
fn split_fields(line: &str, n: usize, line_no: usize) -> Result<Vec<(usize, &str)>, TraceError> {
    let mut fields = Vec::with_capacity(n);
    let mut col = 1;
    for part in line.split(',') {
        fields.push((col, part));
        col += part.len() + 1;
    }
    if fields.len() != n {
        return Err(TraceError::parse(
            line_no,
            1,
            format!("expected {n} comma-separated fields, got {}", fields.len()),
        ));
    }
    Ok(fields)
}

/// Parse a pair trace (`cw_ticks,cr_us` header). Reference times must be
/// strictly increasing.
pub fn parse_pair_trace(bytes: &[u8]) -> Result<PairTrace, TraceError> {
    let text = utf8(bytes)?;
    let mut rows = Vec::new();
    let mut prev_cr: Option<u64> = None;
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line.trim() != PAIR_TRACE_HEADER {
                return Err(TraceError::parse(
                    line_no,
                    1,
                    format!("expected header '{PAIR_TRACE_HEADER}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields = split_fields(line, 2, line_no)?;
        let cw = parse_u64(fields[0].1, line_no, fields[0].0)?;
        let cr = parse_u64(fields[1].1, line_no, fields[1].0)?;
        if let Some(p) = prev_cr {
            if cr <= p {
                return Err(TraceError::Monotonicity {
                    line: line_no,
                    reason: format!("cr_us {cr} does not exceed previous value {p}"),
                });
            }
        }
        prev_cr = Some(cr);
        rows.push((cw, cr));
    }
    if !saw_header {
        return Err(TraceError::parse(
            1,
            1,
            format!("missing header '{PAIR_TRACE_HEADER}'"),
        ));
    }
    Ok(PairTrace { rows })
}

/// Parse a burst trace (`burst_index,cw_first,cw_last` header). Each row
/// must satisfy `cw_last >= cw_first`.
pub fn parse_burst_trace(bytes: &[u8]) -> Result<BurstTrace, TraceError> {
    let text = utf8(bytes)?;
    let mut rows = Vec::new();
    let mut saw_header = false;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line.trim() != BURST_TRACE_HEADER {
                return Err(TraceError::parse(
                    line_no,
                    1,
                    format!("expected header '{BURST_TRACE_HEADER}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields = split_fields(line, 3, line_no)?;
        let burst_index = parse_u64(fields[0].1, line_no, fields[0].0)?;
        let cw_first = parse_u64(fields[1].1, line_no, fields[1].0)?;
        let cw_last = parse_u64(fields[2].1, line_no, fields[2].0)?;
        if cw_last < cw_first {
            return Err(TraceError::Monotonicity {
                line: line_no,
                reason: format!("cw_last {cw_last} is below cw_first {cw_first}"),
            });
        }
        rows.push(BurstRow {
            burst_index,
            cw_first,
            cw_last,
        });
    }
    if !saw_header {
        return Err(TraceError::parse(
            1,
            1,
            format!("missing header '{BURST_TRACE_HEADER}'"),
        ));
    }
    Ok(BurstTrace { rows })
}

fn fmt6(x: f64) -> String {
    format!("{x:.6}")
}

/// Serialize metrics: fixed header, one decimal row per step (gamma and
/// rate with six fractional digits, powered as 1/0), then the summary as
/// trailing `#` comment lines.
pub fn write_metrics(metrics: &RunMetrics) -> String {
    let mut out = String::new();
    out.push_str(METRICS_HEADER);
    out.push('\n');
    for s in &metrics.series {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.step,
            s.ref_time_us,
            fmt6(s.gamma_ticks),
            fmt6(s.rate_or_slope),
            u8::from(s.powered),
        ));
    }
    let sm = &metrics.summary;
    out.push_str(&format!("# tick_us = {}\n", metrics.tick_us));
    out.push_str(&format!("# warmup_us = {}\n", metrics.warmup_us));
    out.push_str(&format!("# samples = {}\n", sm.samples));
    out.push_str(&format!("# gaps = {}\n", sm.gaps));
    out.push_str(&format!(
        "# mean_abs_gamma_ticks = {}\n",
        fmt6(sm.mean_abs_gamma_ticks)
    ));
    out.push_str(&format!(
        "# max_abs_gamma_ticks = {}\n",
        fmt6(sm.max_abs_gamma_ticks)
    ));
    out.push_str(&format!(
        "# std_gamma_ticks = {}\n",
        fmt6(sm.std_gamma_ticks)
    ));
    out.push_str(&format!(
        "# mean_abs_gamma_ms = {}\n",
        fmt6(sm.mean_abs_gamma_ms)
    ));
    out.push_str(&format!(
        "# max_abs_gamma_ms = {}\n",
        fmt6(sm.max_abs_gamma_ms)
    ));
    out.push_str(&format!("# converged = {}\n", u8::from(sm.converged)));
    if let Some(nv) = sm.nv {
        // 17 significant digits round-trips an f64 exactly.
        out.push_str(&format!("# nv_alpha = {:.16e}\n", nv.rate_multiplier));
        out.push_str(&format!("# nv_checksum = {}\n", nv.checksum));
    }
    out
}

/// Parse a metrics file back. The series is recovered exactly; the
/// summary is recomputed from the series plus the `tick_us`, `warmup_us`
/// and snapshot comment fields.
pub fn parse_metrics(bytes: &[u8]) -> Result<RunMetrics, TraceError> {
    let text = utf8(bytes)?;
    let mut series = Vec::new();
    let mut saw_header = false;
    let mut tick_us = 32.0;
    let mut warmup_us = 0u64;
    let mut nv_alpha: Option<f64> = None;
    let mut nv_checksum: Option<u32> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                match k.trim() {
                    "tick_us" => {
                        tick_us = v.trim().parse().map_err(|_| {
                            TraceError::parse(line_no, 1, "bad tick_us value")
                        })?;
                    }
                    "warmup_us" => {
                        warmup_us = v.trim().parse().map_err(|_| {
                            TraceError::parse(line_no, 1, "bad warmup_us value")
                        })?;
                    }
                    "nv_alpha" => {
                        nv_alpha = Some(v.trim().parse().map_err(|_| {
                            TraceError::parse(line_no, 1, "bad nv_alpha value")
                        })?);
                    }
                    "nv_checksum" => {
                        nv_checksum = Some(v.trim().parse().map_err(|_| {
                            TraceError::parse(line_no, 1, "bad nv_checksum value")
                        })?);
                    }
                    _ => {}
                }
            }
            continue;
        }
        if !saw_header {
            if line.trim() != METRICS_HEADER {
                return Err(TraceError::parse(
                    line_no,
                    1,
                    format!("expected header '{METRICS_HEADER}'"),
                ));
            }
            saw_header = true;
            continue;
        }
        let fields = split_fields(line, 5, line_no)?;
        let step = parse_u64(fields[0].1, line_no, fields[0].0)?;
        let ref_time_us = parse_u64(fields[1].1, line_no, fields[1].0)?;
        let gamma_ticks: f64 = fields[2].1.trim().parse().map_err(|_| {
            TraceError::parse(line_no, fields[2].0, "expected decimal gamma_ticks")
        })?;
        let rate_or_slope: f64 = fields[3].1.trim().parse().map_err(|_| {
            TraceError::parse(line_no, fields[3].0, "expected decimal rate_or_slope")
        })?;
        let powered = match fields[4].1.trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(TraceError::parse(
                    line_no,
                    fields[4].0,
                    format!("expected powered flag 0 or 1, got '{other}'"),
                ))
            }
        };
        series.push(MetricStep {
            step,
            ref_time_us,
            gamma_ticks,
            rate_or_slope,
            powered,
        });
    }
    if !saw_header {
        return Err(TraceError::parse(
            1,
            1,
            format!("missing header '{METRICS_HEADER}'"),
        ));
    }
    let nv = match (nv_alpha, nv_checksum) {
        (Some(rate_multiplier), Some(checksum)) => Some(NvSnapshot {
            rate_multiplier,
            checksum,
        }),
        _ => None,
    };
    let summary: RunSummary = RunMetrics::compute_summary(&series, warmup_us, tick_us, nv);
    Ok(RunMetrics {
        series,
        summary,
        tick_us,
        warmup_us,
    })
}

/// Parse the flat `key = value` scenario-config format. `#` starts a
/// comment; dotted keys address sub-models (`delays.mean_ms = 1.89`).
/// Unknown keys and malformed values are field-level errors.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, InvalidConfig> {
    let mut cfg = ScenarioConfig::default();
    let mut seen: HashSet<String> = HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| InvalidConfig {
            field: format!("line {line_no}"),
            reason: "expected 'key = value'".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_string()) {
            return Err(InvalidConfig {
                field: key.to_string(),
                reason: format!("duplicate key (line {line_no})"),
            });
        }
        apply_key(&mut cfg, key, value).map_err(|reason| InvalidConfig {
            field: key.to_string(),
            reason: format!("{reason} (line {line_no})"),
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn apply_key(cfg: &mut ScenarioConfig, key: &str, value: &str) -> Result<(), String> {
    fn f(value: &str) -> Result<f64, String> {
        value
            .parse::<f64>()
            .map_err(|_| format!("expected a number, got '{value}'"))
    }
    fn b(value: &str) -> Result<bool, String> {
        match value {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            _ => Err(format!("expected a boolean, got '{value}'")),
        }
    }
    match key {
        "engine" => cfg.engine = value.parse::<Engine>()?,
        "duration_s" => cfg.duration_s = f(value)?,
        "exchange_interval_s" => cfg.exchange_interval_s = f(value)?,
        "burst_interval_s" => cfg.burst_interval_s = f(value)?,
        "gain" => cfg.gain = f(value)?,
        "mu_e" => cfg.mu_e = f(value)?,
        "window_n" => {
            cfg.window_n = value
                .parse::<usize>()
                .map_err(|_| format!("expected an unsigned integer, got '{value}'"))?
        }
        "seed" => {
            cfg.seed = value
                .parse::<u64>()
                .map_err(|_| format!("expected an unsigned integer, got '{value}'"))?
        }
        "step_s" => cfg.step_s = f(value)?,
        "warmup_s" => cfg.warmup_s = f(value)?,
        "wrap_16bit" => cfg.wrap_16bit = b(value)?,
        "oscillator.f_nom_hz" => cfg.oscillator.f_nom = f(value)?,
        "oscillator.f_min_hz" => cfg.oscillator.f_min = f(value)?,
        "oscillator.f_max_hz" => cfg.oscillator.f_max = f(value)?,
        "oscillator.static_drift" => cfg.oscillator.static_drift = f(value)?,
        "oscillator.noise_sigma" => cfg.oscillator.noise_sigma = f(value)?,
        "oscillator.voltage_coeff" => cfg.oscillator.voltage_coeff = f(value)?,
        "oscillator.v_nom" => cfg.oscillator.v_nom = f(value)?,
        "delays.mean_ms" => cfg.delays.mean_ms = f(value)?,
        "delays.sigma_ms" => cfg.delays.sigma_ms = f(value)?,
        "delays.outlier_prob" => cfg.delays.outlier_prob = f(value)?,
        "delays.outlier_scale" => cfg.delays.outlier_scale = f(value)?,
        "periods.mean_ms" => cfg.periods.mean_ms = f(value)?,
        "periods.sigma_ms" => cfg.periods.sigma_ms = f(value)?,
        "power.mode" => {
            cfg.power.mode = match value {
                "constant" => PowerMode::Constant,
                "harvested" => PowerMode::Harvested,
                _ => return Err(format!("expected constant | harvested, got '{value}'")),
            }
        }
        "power.v_const" => cfg.power.v_const = f(value)?,
        "power.v_on" => cfg.power.v_on = f(value)?,
        "power.v_off" => cfg.power.v_off = f(value)?,
        "power.charge_rate" => cfg.power.charge_rate = f(value)?,
        "power.discharge_rate_active" => cfg.power.discharge_rate_active = f(value)?,
        "power.ripple_sigma" => cfg.power.ripple_sigma = f(value)?,
        _ => return Err("unknown key".into()),
    }
    Ok(())
}

/// Render a config back to the flat key = value format (used by tooling
/// and tests; comments are not preserved).
pub fn write_config(cfg: &ScenarioConfig) -> String {
    let mode = match cfg.power.mode {
        PowerMode::Constant => "constant",
        PowerMode::Harvested => "harvested",
    };
    format!(
        "engine = {}\n\
         duration_s = {}\n\
         exchange_interval_s = {}\n\
         burst_interval_s = {}\n\
         gain = {}\n\
         mu_e = {}\n\
         window_n = {}\n\
         seed = {}\n\
         step_s = {}\n\
         warmup_s = {}\n\
         wrap_16bit = {}\n\
         oscillator.f_nom_hz = {}\n\
         oscillator.f_min_hz = {}\n\
         oscillator.f_max_hz = {}\n\
         oscillator.static_drift = {}\n\
         oscillator.noise_sigma = {}\n\
         oscillator.voltage_coeff = {}\n\
         oscillator.v_nom = {}\n\
         delays.mean_ms = {}\n\
         delays.sigma_ms = {}\n\
         delays.outlier_prob = {}\n\
         delays.outlier_scale = {}\n\
         periods.mean_ms = {}\n\
         periods.sigma_ms = {}\n\
         power.mode = {}\n\
         power.v_const = {}\n\
         power.v_on = {}\n\
         power.v_off = {}\n\
         power.charge_rate = {}\n\
         power.discharge_rate_active = {}\n\
         power.ripple_sigma = {}\n",
        cfg.engine.as_str(),
        cfg.duration_s,
        cfg.exchange_interval_s,
        cfg.burst_interval_s,
        cfg.gain,
        cfg.mu_e,
        cfg.window_n,
        cfg.seed,
        cfg.step_s,
        cfg.warmup_s,
        cfg.wrap_16bit,
        cfg.oscillator.f_nom,
        cfg.oscillator.f_min,
        cfg.oscillator.f_max,
        cfg.oscillator.static_drift,
        cfg.oscillator.noise_sigma,
        cfg.oscillator.voltage_coeff,
        cfg.oscillator.v_nom,
        cfg.delays.mean_ms,
        cfg.delays.sigma_ms,
        cfg.delays.outlier_prob,
        cfg.delays.outlier_scale,
        cfg.periods.mean_ms,
        cfg.periods.sigma_ms,
        mode,
        cfg.power.v_const,
        cfg.power.v_on,
        cfg.power.v_off,
        cfg.power.charge_rate,
        cfg.power.discharge_rate_active,
        cfg.power.ripple_sigma,
    )
}
