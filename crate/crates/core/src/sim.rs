//! Deterministic discrete-event scenario engine wiring clocks, channel,
//! power and a sync engine into per-step error metrics.
//!
//! Ordering inside one step: voltage step, power transitions, clock
//! advance, scheduled protocol action, sync-engine update, metric
//! emission. One seeded generator per scenario with independent named
//! substreams for delay, period, drift noise and ripple, so changing one
//! model does not shift another's draws.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::channel::{
    run_blockwrite_burst, run_read_exchange, DelayModel, EventPeriodModel, TagTimeline,
    TagUnpowered,
};
use crate::clock::{LocalClock, OscillatorModel, ReferenceClock};
use crate::power::{
    persist, power_state, step_voltage, NvSnapshot, PowerModel, PowerStatus, PowerTransition,
    VoltageState,
};
use crate::sync::{ControllerState, RegressionState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid config: {field}: {reason}")]
pub struct InvalidConfig {
    pub field: String,
    pub reason: String,
}

impl InvalidConfig {
    fn new(field: &str, reason: impl Into<String>) -> Self {
        InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Engine {
    SenderReceiver,
    EventBased,
    None,
}

impl Engine {
    pub fn as_str(&self) -> &'static str {
        match self {
            Engine::SenderReceiver => "sender_receiver",
            Engine::EventBased => "event_based",
            Engine::None => "none",
        }
    }
}

impl std::str::FromStr for Engine {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sender_receiver" => Ok(Engine::SenderReceiver),
            "event_based" => Ok(Engine::EventBased),
            "none" => Ok(Engine::None),
            other => Err(format!(
                "unknown engine '{other}' (expected sender_receiver | event_based | none)"
            )),
        }
    }
}

/// Full experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub engine: Engine,
    pub duration_s: f64,
    /// Exchange cadence for the sender-receiver engine, seconds.
    pub exchange_interval_s: f64,
    /// Burst cadence for the event-based engine, seconds.
    pub burst_interval_s: f64,
    pub oscillator: OscillatorModel,
    pub delays: DelayModel,
    pub periods: EventPeriodModel,
    pub power: PowerModel,
    /// Integral gain of the event-based controller.
    pub gain: f64,
    /// Mean event period in ticks.
    pub mu_e: f64,
    /// Regression window size.
    pub window_n: usize,
    pub seed: u64,
    /// Simulator integration step, seconds.
    pub step_s: f64,
    /// Leading span excluded from summary statistics, seconds.
    pub warmup_s: f64,
    pub wrap_16bit: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            engine: Engine::EventBased,
            duration_s: 30.0,
            exchange_interval_s: 1.0,
            burst_interval_s: 0.25,
            oscillator: OscillatorModel::default(),
            delays: DelayModel::default(),
            periods: EventPeriodModel::default(),
            power: PowerModel::default(),
            gain: 1e-4,
            mu_e: 7086.0,
            window_n: 8,
            seed: 0,
            step_s: 1e-3,
            warmup_s: 0.0,
            wrap_16bit: false,
        }
    }
}

impl ScenarioConfig {
    // Negated comparisons are deliberate: NaN must fail validation.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), InvalidConfig> {
        if !(self.duration_s > 0.0) {
            return Err(InvalidConfig::new("duration_s", "must be positive"));
        }
        if !(self.exchange_interval_s > 0.0) {
            return Err(InvalidConfig::new("exchange_interval_s", "must be positive"));
        }
        if !(self.burst_interval_s > 0.0) {
            return Err(InvalidConfig::new("burst_interval_s", "must be positive"));
        }
        if !(self.step_s > 0.0) {
            return Err(InvalidConfig::new("step_s", "must be positive"));
        }
        if self.window_n < 2 {
            return Err(InvalidConfig::new("window_n", "must be at least 2"));
        }
        if !(self.mu_e > 0.0) {
            return Err(InvalidConfig::new("mu_e", "must be positive"));
        }
        if !self.gain.is_finite() || self.gain < 0.0 {
            return Err(InvalidConfig::new("gain", "must be finite and non-negative"));
        }
        if !(self.warmup_s >= 0.0 && self.warmup_s < self.duration_s) {
            return Err(InvalidConfig::new("warmup_s", "must be in [0, duration_s)"));
        }
        self.oscillator
            .validate()
            .map_err(|r| InvalidConfig::new("oscillator", r))?;
        self.delays
            .validate()
            .map_err(|r| InvalidConfig::new("delays", r))?;
        self.periods
            .validate()
            .map_err(|r| InvalidConfig::new("periods", r))?;
        self.power
            .validate()
            .map_err(|r| InvalidConfig::new("power", r))?;
        if self.engine == Engine::EventBased || self.engine == Engine::None {
            let period_s = self.periods.mean_ms / 1000.0;
            if self.burst_interval_s <= period_s {
                return Err(InvalidConfig::new(
                    "burst_interval_s",
                    "must exceed the mean event period",
                ));
            }
        }
        Ok(())
    }

    /// One nominal tick in microseconds.
    pub fn tick_us(&self) -> f64 {
        self.oscillator.tick_us()
    }

    fn controller(&self) -> ControllerState {
        let clamp_min = self.oscillator.f_nom / self.oscillator.f_max;
        let clamp_max = self.oscillator.f_nom / self.oscillator.f_min;
        let gain = if self.engine == Engine::None {
            0.0
        } else {
            self.gain
        };
        ControllerState::new(gain, self.mu_e, clamp_min, clamp_max)
    }
}

/// One emitted measurement. `powered == false` marks a protocol action
/// lost to power death (a gap); its gamma is zero filler and is excluded
/// from summary statistics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricStep {
    pub step: u64,
    pub ref_time_us: u64,
    pub gamma_ticks: f64,
    pub rate_or_slope: f64,
    pub powered: bool,
}

/// Summary over powered, post-warmup steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub samples: u64,
    pub gaps: u64,
    pub mean_abs_gamma_ticks: f64,
    pub max_abs_gamma_ticks: f64,
    pub std_gamma_ticks: f64,
    pub mean_abs_gamma_ms: f64,
    pub max_abs_gamma_ms: f64,
    pub converged: bool,
    pub nv: Option<NvSnapshot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub series: Vec<MetricStep>,
    pub summary: RunSummary,
    /// Tick duration used to convert ticks to milliseconds.
    pub tick_us: f64,
    /// Steps before this reference time are excluded from the summary.
    pub warmup_us: u64,
}

impl RunMetrics {
    /// Recompute the summary from the series. The stored summary always
    /// equals this (the series carries everything the summary needs).
    pub fn compute_summary(
        series: &[MetricStep],
        warmup_us: u64,
        tick_us: f64,
        nv: Option<NvSnapshot>,
    ) -> RunSummary {
        let gaps = series.iter().filter(|s| !s.powered).count() as u64;
        let post: Vec<f64> = series
            .iter()
            .filter(|s| s.powered && s.ref_time_us >= warmup_us)
            .map(|s| s.gamma_ticks)
            .collect();
        let n = post.len();
        let (mean_abs, max_abs, std) = if n == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let mean_abs = post.iter().map(|g| g.abs()).sum::<f64>() / n as f64;
            let max_abs = post.iter().map(|g| g.abs()).fold(0.0, f64::max);
            let mean = post.iter().sum::<f64>() / n as f64;
            let var = post.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / n as f64;
            (mean_abs, max_abs, var.sqrt())
        };
        // A gain outside the theoretical bound drives the controller into a
        // sign-alternating oscillation pinned at the rate-multiplier clamps:
        // consecutive errors flip sign, so the mean step between samples
        // approaches twice the mean magnitude. Converged runs either sit at
        // the quantization floor or wander (ratio near sqrt(2) for white
        // noise, lower when biased).
        let converged = if n < 8 {
            true
        } else {
            let tail = &post[n / 2..];
            let tail_mean = tail.iter().map(|g| g.abs()).sum::<f64>() / tail.len() as f64;
            let mean_step = tail
                .windows(2)
                .map(|w| (w[1] - w[0]).abs())
                .sum::<f64>()
                / (tail.len() - 1) as f64;
            !(tail_mean > 1.0 && mean_step > 1.9 * tail_mean)
        };
        RunSummary {
            samples: n as u64,
            gaps,
            mean_abs_gamma_ticks: mean_abs,
            max_abs_gamma_ticks: max_abs,
            std_gamma_ticks: std,
            mean_abs_gamma_ms: mean_abs * tick_us / 1000.0,
            max_abs_gamma_ms: max_abs * tick_us / 1000.0,
            converged,
            nv,
        }
    }
}

/// Round to the 6-fractional-digit resolution of the metrics file format,
/// so in-memory series and written series agree exactly.
fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

// RNG substream ids; per-model draws stay independent of each other.
const STREAM_DELAY: u64 = 1;
const STREAM_PERIOD: u64 = 2;
const STREAM_DRIFT: u64 = 3;
const STREAM_RIPPLE: u64 = 4;

fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// The simulated world between protocol actions: supply voltage, power
/// status with hysteresis, and the tag's local clock.
struct SimWorld {
    t_us: u64,
    step_us: u64,
    tag: LocalClock,
    volt: VoltageState,
    status: PowerStatus,
    deaths: u64,
    power: PowerModel,
    rng_drift: ChaCha8Rng,
    rng_ripple: ChaCha8Rng,
}

impl SimWorld {
    fn new(cfg: &ScenarioConfig) -> Self {
        let mut tag = LocalClock::new(cfg.oscillator.clone(), 0);
        tag.wrap_16bit = cfg.wrap_16bit;
        let v0 = match cfg.power.mode {
            crate::power::PowerMode::Constant => cfg.power.v_const,
            crate::power::PowerMode::Harvested => cfg.power.v_off,
        };
        let status = if v0 >= cfg.power.v_on {
            PowerStatus::On
        } else {
            PowerStatus::Off
        };
        let mut volt = VoltageState::new(v0);
        volt.active = status == PowerStatus::On;
        SimWorld {
            t_us: 0,
            step_us: (cfg.step_s * 1e6).round().max(1.0) as u64,
            tag,
            volt,
            status,
            deaths: 0,
            power: cfg.power.clone(),
            rng_drift: substream(cfg.seed, STREAM_DRIFT),
            rng_ripple: substream(cfg.seed, STREAM_RIPPLE),
        }
    }

    /// Advance the world to `target_us` in integration steps: voltage,
    /// then power transitions, then the clock (while powered).
    fn step_to(&mut self, target_us: u64) {
        while self.t_us < target_us {
            let dt_us = self.step_us.min(target_us - self.t_us);
            let dt = dt_us as f64 * 1e-6;
            self.volt.active = self.status == PowerStatus::On;
            let v = step_voltage(&self.power, &mut self.volt, dt, &mut self.rng_ripple);
            match power_state(v, self.status, &self.power) {
                PowerTransition::Died => {
                    self.status = PowerStatus::Off;
                    self.deaths += 1;
                }
                PowerTransition::Revived => {
                    self.status = PowerStatus::On;
                    // Power-on: counter restarts from zero at a new t0.
                    self.tag.reset(self.t_us + dt_us);
                }
                PowerTransition::On | PowerTransition::Off => {}
            }
            if self.status == PowerStatus::On {
                self.tag.advance(dt, self.volt.volts, &mut self.rng_drift);
            }
            self.t_us += dt_us;
        }
    }
}

/// Adapter giving the channel a view of the world that reports power
/// loss during the interval it is asked to cross.
struct WorldTimeline<'a> {
    world: &'a mut SimWorld,
    deaths_at_start: u64,
}

impl<'a> WorldTimeline<'a> {
    fn new(world: &'a mut SimWorld) -> Self {
        let deaths_at_start = world.deaths;
        WorldTimeline {
            world,
            deaths_at_start,
        }
    }
}

impl TagTimeline for WorldTimeline<'_> {
    fn advance_to(&mut self, t_us: u64) -> Result<u64, TagUnpowered> {
        self.world.step_to(t_us);
        if self.world.status != PowerStatus::On || self.world.deaths > self.deaths_at_start {
            return Err(TagUnpowered);
        }
        Ok(self.world.tag.read())
    }
}

/// Run one scenario to completion.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<RunMetrics, InvalidConfig> {
    cfg.validate()?;
    let tick_us = cfg.tick_us();
    let warmup_us = (cfg.warmup_s * 1e6).round() as u64;
    let duration_us = (cfg.duration_s * 1e6).round() as u64;
    let interval_us = match cfg.engine {
        Engine::SenderReceiver => (cfg.exchange_interval_s * 1e6).round() as u64,
        Engine::EventBased | Engine::None => (cfg.burst_interval_s * 1e6).round() as u64,
    };

    let mut world = SimWorld::new(cfg);
    let mut reader = ReferenceClock::new();
    let mut rng_delay = substream(cfg.seed, STREAM_DELAY);
    let mut rng_period = substream(cfg.seed, STREAM_PERIOD);

    let mut regression = RegressionState::new(cfg.window_n);
    let mut controller = cfg.controller();
    let mut nv = persist(&controller);
    let mut deaths_handled = 0u64;

    let mut series: Vec<MetricStep> = Vec::new();
    let mut step_idx = 0u64;
    let mut next_us = interval_us;

    while next_us <= duration_us {
        world.step_to(next_us);
        // Death clears volatile sync state; the persisted rate multiplier
        // survives into the revived controller.
        if world.deaths > deaths_handled {
            deaths_handled = world.deaths;
            regression.clear();
            controller.clear_volatile();
            if let Ok(alpha) = crate::power::restore(&nv) {
                controller.rate_multiplier = alpha;
            }
        }
        reader.set_us(world.t_us.max(reader.now_us()));

        let mut powered = world.status == PowerStatus::On;
        let mut gamma_ticks = 0.0;
        let mut rate_or_slope = match cfg.engine {
            Engine::SenderReceiver => regression.coefficients().map(|(_, s)| s).unwrap_or(0.0),
            _ => controller.rate_multiplier,
        };

        if powered {
            match cfg.engine {
                Engine::SenderReceiver => {
                    let mut timeline = WorldTimeline::new(&mut world);
                    match run_read_exchange(&mut reader, &mut timeline, &cfg.delays, &mut rng_delay)
                    {
                        Ok(rec) => {
                            let had_full_window = regression.is_full();
                            if had_full_window {
                                let predicted = regression
                                    .predict(rec.cw_at_t2)
                                    .expect("full window is fitted");
                                let gamma_us =
                                    crate::sync::sync_error(predicted, rec.cr_at_t1 as f64);
                                gamma_ticks = gamma_us / tick_us;
                            }
                            regression.push(rec.cw_at_t2, rec.cr_at_t1);
                            rate_or_slope =
                                regression.coefficients().map(|(_, s)| s).unwrap_or(0.0);
                            if !had_full_window {
                                // No prediction exists until the window has
                                // filled once; these warm-fill exchanges emit
                                // no metric row.
                                next_us += interval_us;
                                continue;
                            }
                        }
                        Err(TagUnpowered) => powered = false,
                    }
                }
                Engine::EventBased | Engine::None => {
                    let mut timeline = WorldTimeline::new(&mut world);
                    match run_blockwrite_burst(
                        &mut reader,
                        &mut timeline,
                        &cfg.periods,
                        &mut rng_period,
                    ) {
                        Ok(rec) => {
                            controller.on_first_blockwrite(rec.cw_first);
                            let gamma = controller
                                .on_last_blockwrite(rec.cw_last)
                                .expect("first event was just stored");
                            gamma_ticks = gamma;
                            rate_or_slope = controller.rate_multiplier;
                            // Checkpoint after every controller update.
                            nv = persist(&controller);
                        }
                        Err(TagUnpowered) => powered = false,
                    }
                }
            }
        }

        series.push(MetricStep {
            step: step_idx,
            ref_time_us: world.t_us.max(next_us),
            gamma_ticks: round6(gamma_ticks),
            rate_or_slope: round6(rate_or_slope),
            powered,
        });
        step_idx += 1;
        next_us += interval_us;
    }

    let nv_out = match cfg.engine {
        Engine::EventBased | Engine::None => Some(nv),
        Engine::SenderReceiver => None,
    };
    let summary = RunMetrics::compute_summary(&series, warmup_us, tick_us, nv_out);
    Ok(RunMetrics {
        series,
        summary,
        tick_us,
        warmup_us,
    })
}

/// Per-gain summary from `sweep_gain`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainSummary {
    pub gain: f64,
    pub summary: RunSummary,
}

/// Run one seeded scenario per gain; summaries are returned in input order.
pub fn sweep_gain(cfg: &ScenarioConfig, gains: &[f64]) -> Result<Vec<GainSummary>, InvalidConfig> {
    if cfg.engine != Engine::EventBased {
        return Err(InvalidConfig::new(
            "engine",
            "sweep_gain requires engine = event_based",
        ));
    }
    gains
        .iter()
        .map(|&gain| {
            let mut c = cfg.clone();
            c.gain = gain;
            run_scenario(&c).map(|m| GainSummary {
                gain,
                summary: m.summary,
            })
        })
        .collect()
}

/// Paired controlled / uncontrolled runs of the identical seeded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct CompareResult {
    pub with_sync: RunMetrics,
    pub without_sync: RunMetrics,
    /// Uncontrolled over controlled mean |gamma|; reported as 1 when both
    /// sit at the quantization floor.
    pub improvement_ratio: f64,
}

/// Run the configured scenario with its gain and again with gain zero.
pub fn compare_with_without(cfg: &ScenarioConfig) -> Result<CompareResult, InvalidConfig> {
    if cfg.engine != Engine::EventBased {
        return Err(InvalidConfig::new(
            "engine",
            "compare_with_without requires engine = event_based",
        ));
    }
    let with_sync = run_scenario(cfg)?;
    let mut baseline_cfg = cfg.clone();
    baseline_cfg.gain = 0.0;
    let without_sync = run_scenario(&baseline_cfg)?;
    let a = with_sync.summary.mean_abs_gamma_ticks;
    let b = without_sync.summary.mean_abs_gamma_ticks;
    let improvement_ratio = if a < 1.0 && b < 1.0 {
        1.0
    } else if a == 0.0 {
        f64::INFINITY
    } else {
        b / a
    };
    Ok(CompareResult {
        with_sync,
        without_sync,
        improvement_ratio,
    })
}

#[cfg(test)]
#[allow(clippy::field_reassign_with_default)]
mod tests {
    use super::*;

    fn drift_free_config() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::None;
        cfg.duration_s = 10.0;
        cfg.burst_interval_s = 0.25;
        // Period chosen so the drift-free clock gains exactly mu_e ticks.
        cfg.periods = EventPeriodModel {
            mean_ms: 7086.0 * 0.032,
            sigma_ms: 0.0,
        };
        cfg.delays.sigma_ms = 0.0;
        cfg.oscillator.noise_sigma = 0.0;
        cfg
    }

    #[test]
    fn engine_none_perfect_clock_zero_error() {
        let metrics = run_scenario(&drift_free_config()).unwrap();
        assert!(!metrics.series.is_empty());
        for s in &metrics.series {
            assert_eq!(s.gamma_ticks, 0.0, "step {}", s.step);
        }
    }

    #[test]
    fn event_based_converges_on_fast_clock() {
        let mut cfg = drift_free_config();
        cfg.engine = Engine::EventBased;
        cfg.duration_s = 40.0;
        cfg.warmup_s = 10.0;
        cfg.oscillator.static_drift = 0.01;
        cfg.oscillator.f_max = cfg.oscillator.f_nom * 1.02;
        cfg.oscillator.f_min = cfg.oscillator.f_nom * 0.98;
        let metrics = run_scenario(&cfg).unwrap();
        assert!(
            metrics.summary.max_abs_gamma_ticks < 1.0,
            "max {}",
            metrics.summary.max_abs_gamma_ticks
        );
        assert!(metrics.summary.converged);
    }

    #[test]
    fn determinism_same_seed_same_series() {
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::EventBased;
        cfg.duration_s = 10.0;
        cfg.oscillator.noise_sigma = 20e-6;
        cfg.oscillator.static_drift = 50e-6;
        cfg.seed = 99;
        let a = run_scenario(&cfg).unwrap();
        let b = run_scenario(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed = 100;
        let c = run_scenario(&cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn reference_time_strictly_increases() {
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::SenderReceiver;
        cfg.duration_s = 30.0;
        cfg.oscillator.static_drift = 50e-6;
        let metrics = run_scenario(&cfg).unwrap();
        for w in metrics.series.windows(2) {
            assert!(w[1].ref_time_us > w[0].ref_time_us);
        }
    }

    #[test]
    fn invalid_config_names_field() {
        let mut cfg = ScenarioConfig::default();
        cfg.duration_s = -1.0;
        let err = run_scenario(&cfg).unwrap_err();
        assert_eq!(err.field, "duration_s");
    }

    #[test]
    fn gaps_count_death_interrupted_actions() {
        use crate::power::PowerMode;
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::EventBased;
        cfg.duration_s = 30.0;
        cfg.power.mode = PowerMode::Harvested;
        cfg.power.charge_rate = 1.0;
        cfg.power.discharge_rate_active = 0.5;
        let metrics = run_scenario(&cfg).unwrap();
        let gap_rows = metrics.series.iter().filter(|s| !s.powered).count() as u64;
        assert!(gap_rows > 0, "harvested scenario should lose some bursts");
        assert_eq!(metrics.summary.gaps, gap_rows);
    }

    #[test]
    fn summary_recomputable_from_series() {
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::EventBased;
        cfg.duration_s = 20.0;
        cfg.oscillator.static_drift = 200e-6;
        cfg.oscillator.f_max = cfg.oscillator.f_nom * 1.01;
        cfg.oscillator.f_min = cfg.oscillator.f_nom * 0.99;
        cfg.warmup_s = 5.0;
        let metrics = run_scenario(&cfg).unwrap();
        let recomputed = RunMetrics::compute_summary(
            &metrics.series,
            metrics.warmup_us,
            metrics.tick_us,
            metrics.summary.nv,
        );
        assert_eq!(metrics.summary, recomputed);
    }

    #[test]
    fn sweep_requires_event_engine() {
        let mut cfg = ScenarioConfig::default();
        cfg.engine = Engine::SenderReceiver;
        assert!(sweep_gain(&cfg, &[1e-4]).is_err());
    }

    #[test]
    fn compare_drift_free_reports_unity() {
        let mut cfg = drift_free_config();
        cfg.engine = Engine::EventBased;
        let result = compare_with_without(&cfg).unwrap();
        assert_eq!(result.improvement_ratio, 1.0);
    }
}
