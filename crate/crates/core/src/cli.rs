//! Batch command-line front end: simulate | regress | controller |
//! sweep-beta. Summaries go to standard output, series to files.
//!
//! Exit codes: 0 success, 2 input/config error, 3 insufficient data.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::sim::{
    compare_with_without, run_scenario, sweep_gain, Engine, RunMetrics, ScenarioConfig,
};
use crate::sync::{convergence_bound, ControllerState};
use crate::trace_io;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT_ERROR: i32 = 2;
pub const EXIT_INSUFFICIENT_DATA: i32 = 3;

/// An error carrying the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT_ERROR,
            message: message.into(),
        }
    }

    fn insufficient(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INSUFFICIENT_DATA,
            message: message.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "tagsync",
    about = "Clock-synchronization simulator for RFID readers and intermittently powered backscatter tags"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Metrics series output path.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Series format (only csv is supported).
    #[arg(long, default_value = "csv")]
    pub format: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run a scenario from a config file and write its metrics series.
    Simulate {
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the config engine (sender_receiver | event_based | none).
        #[arg(long)]
        engine: Option<Engine>,
        /// Also run the gain = 0 baseline and report the improvement ratio.
        #[arg(long)]
        compare: bool,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Replay sliding-window regression over a recorded pair trace.
    Regress {
        trace: PathBuf,
        /// Regression window size.
        #[arg(long, default_value_t = 8)]
        window: usize,
        /// Tick duration used to express errors in ticks.
        #[arg(long, default_value_t = 32.0)]
        tick_us: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Replay the integral controller over a recorded burst trace.
    Controller {
        trace: PathBuf,
        /// Integral gain.
        #[arg(long, default_value_t = 1e-4)]
        gain: f64,
        /// Mean event period in ticks.
        #[arg(long = "mu-e", default_value_t = 7086.0)]
        mu_e: f64,
        /// Tick duration, for the convergence-bound check.
        #[arg(long, default_value_t = 32.0)]
        tick_us: f64,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run one scenario per integral gain and print a summary row each.
    SweepBeta {
        config: PathBuf,
        /// Comma-separated gain values, swept in input order.
        #[arg(long, value_delimiter = ',', required = true)]
        gains: Vec<f64>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

/// Run a parsed command line; returns the text destined for stdout.
pub fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Simulate {
            config,
            seed,
            engine,
            compare,
            output,
        } => cmd_simulate(&config, seed, engine, compare, &output),
        Command::Regress {
            trace,
            window,
            tick_us,
            output,
        } => cmd_regress(&trace, window, tick_us, &output),
        Command::Controller {
            trace,
            gain,
            mu_e,
            tick_us,
            output,
        } => cmd_controller(&trace, gain, mu_e, tick_us, &output),
        Command::SweepBeta {
            config,
            gains,
            seed,
        } => cmd_sweep_beta(&config, &gains, seed),
    }
}

fn check_format(output: &OutputArgs) -> Result<(), CliError> {
    if output.format != "csv" {
        return Err(CliError::input(format!(
            "unsupported format '{}': only csv is available",
            output.format
        )));
    }
    Ok(())
}

fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::input(format!("cannot read config '{}': {e}", path.display())))?;
    trace_io::parse_config(&text)
        .map_err(|e| CliError::input(format!("config '{}': {e}", path.display())))
}

fn write_out(path: &Path, metrics: &RunMetrics) -> Result<(), CliError> {
    std::fs::write(path, trace_io::write_metrics(metrics))
        .map_err(|e| CliError::input(format!("cannot write '{}': {e}", path.display())))
}

fn summary_text(metrics: &RunMetrics) -> String {
    let s = &metrics.summary;
    let mut out = String::new();
    let _ = writeln!(out, "samples: {}  gaps: {}", s.samples, s.gaps);
    let _ = writeln!(
        out,
        "mean |gamma|: {:.6} ticks ({:.6} ms)",
        s.mean_abs_gamma_ticks, s.mean_abs_gamma_ms
    );
    let _ = writeln!(
        out,
        "max  |gamma|: {:.6} ticks ({:.6} ms)",
        s.max_abs_gamma_ticks, s.max_abs_gamma_ms
    );
    let _ = writeln!(out, "converged: {}", s.converged);
    out
}

pub fn cmd_simulate(
    config_path: &Path,
    seed: Option<u64>,
    engine: Option<Engine>,
    compare: bool,
    output: &OutputArgs,
) -> Result<String, CliError> {
    check_format(output)?;
    let mut cfg = load_config(config_path)?;
    // Flag overrides beat config-file values.
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    if let Some(engine) = engine {
        cfg.engine = engine;
    }
    if compare {
        let result = compare_with_without(&cfg).map_err(|e| CliError::input(e.to_string()))?;
        write_out(&output.out, &result.with_sync)?;
        let mut text = String::new();
        let _ = writeln!(text, "with sync (gain = {}):", cfg.gain);
        text.push_str(&summary_text(&result.with_sync));
        let _ = writeln!(text, "without sync (gain = 0):");
        text.push_str(&summary_text(&result.without_sync));
        let _ = writeln!(text, "improvement ratio: {:.4}", result.improvement_ratio);
        Ok(text)
    } else {
        let metrics = run_scenario(&cfg).map_err(|e| CliError::input(e.to_string()))?;
        write_out(&output.out, &metrics)?;
        Ok(summary_text(&metrics))
    }
}

pub fn cmd_regress(
    trace_path: &Path,
    window: usize,
    tick_us: f64,
    output: &OutputArgs,
) -> Result<String, CliError> {
    check_format(output)?;
    if window < 2 {
        return Err(CliError::input("window must be at least 2"));
    }
    let bytes = std::fs::read(trace_path)
        .map_err(|e| CliError::input(format!("cannot read trace '{}': {e}", trace_path.display())))?;
    let trace = trace_io::parse_pair_trace(&bytes)
        .map_err(|e| CliError::input(format!("trace '{}': {e}", trace_path.display())))?;
    if trace.rows.len() <= window {
        return Err(CliError::insufficient(format!(
            "trace has {} rows; need more than the window size {window}",
            trace.rows.len()
        )));
    }
    let mut series = Vec::new();
    for (k, target) in trace.rows[window..].iter().enumerate() {
        let fit = crate::sync::ls_regress(&trace.rows[k..k + window])
            .map_err(|e| CliError::input(format!("window ending at row {}: {e}", k + window)))?;
        let (offset, slope) = fit;
        let predicted = offset + slope * target.0 as f64;
        let gamma_ticks = crate::sync::sync_error(predicted, target.1 as f64) / tick_us;
        series.push(crate::sim::MetricStep {
            step: k as u64,
            ref_time_us: target.1,
            gamma_ticks: (gamma_ticks * 1e6).round() / 1e6,
            rate_or_slope: (slope * 1e6).round() / 1e6,
            powered: true,
        });
    }
    let metrics = RunMetrics {
        summary: RunMetrics::compute_summary(&series, 0, tick_us, None),
        series,
        tick_us,
        warmup_us: 0,
    };
    write_out(&output.out, &metrics)?;
    Ok(summary_text(&metrics))
}

pub fn cmd_controller(
    trace_path: &Path,
    gain: f64,
    mu_e: f64,
    tick_us: f64,
    output: &OutputArgs,
) -> Result<String, CliError> {
    check_format(output)?;
    let bytes = std::fs::read(trace_path)
        .map_err(|e| CliError::input(format!("cannot read trace '{}': {e}", trace_path.display())))?;
    let trace = trace_io::parse_burst_trace(&bytes)
        .map_err(|e| CliError::input(format!("trace '{}': {e}", trace_path.display())))?;

    let mut warning = String::new();
    let b_s = mu_e * tick_us / 1e6;
    let f_hz = 1e6 / tick_us;
    let bound = convergence_bound(b_s, f_hz);
    if gain <= 0.0 || gain >= bound {
        let _ = writeln!(
            warning,
            "warning: gain {gain} is outside the convergence bound (0, {bound:.6}); the controller may not converge"
        );
    }

    // Offline replay uses wide clamps; no oscillator bounds apply.
    let mut controller = ControllerState::new(gain, mu_e, 0.5, 1.5);
    let nominal_period_us = (mu_e * tick_us).round().max(1.0) as u64;
    let mut series = Vec::new();
    for (k, row) in trace.rows.iter().enumerate() {
        controller.on_first_blockwrite(row.cw_first);
        let gamma = controller
            .on_last_blockwrite(row.cw_last)
            .expect("first event was just stored");
        series.push(crate::sim::MetricStep {
            step: row.burst_index,
            ref_time_us: (k as u64 + 1) * nominal_period_us,
            gamma_ticks: (gamma * 1e6).round() / 1e6,
            rate_or_slope: (controller.rate_multiplier * 1e6).round() / 1e6,
            powered: true,
        });
    }
    let nv = crate::power::persist(&controller);
    let metrics = RunMetrics {
        summary: RunMetrics::compute_summary(&series, 0, tick_us, Some(nv)),
        series,
        tick_us,
        warmup_us: 0,
    };
    write_out(&output.out, &metrics)?;
    Ok(format!("{warning}{}", summary_text(&metrics)))
}

pub fn cmd_sweep_beta(
    config_path: &Path,
    gains: &[f64],
    seed: Option<u64>,
) -> Result<String, CliError> {
    let mut cfg = load_config(config_path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let rows = sweep_gain(&cfg, gains).map_err(|e| CliError::input(e.to_string()))?;
    let mut out = String::from("gain,mean_abs_gamma_ticks,max_abs_gamma_ticks,gaps,converged\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{}",
            r.gain,
            r.summary.mean_abs_gamma_ticks,
            r.summary.max_abs_gamma_ticks,
            r.summary.gaps,
            u8::from(r.summary.converged),
        );
    }
    Ok(out)
}
