//! Reader reference clock and the tag's drifting, quantized local clock.
//!
//! The tag's counter is driven by a crystal oscillator whose realized
//! frequency wanders inside hard bounds and couples linearly to supply
//! voltage. The reader clock is drift-free by definition.

use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Generative model of a tag oscillator's true frequency.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorModel {
    /// Nominal tick rate, Hz.
    pub f_nom: f64,
    /// Lower drift bound, Hz.
    pub f_min: f64,
    /// Upper drift bound, Hz.
    pub f_max: f64,
    /// Fixed fractional offset of this oscillator instance.
    pub static_drift: f64,
    /// Per-step std-dev of the bounded random-walk drift term, per sqrt(s).
    pub noise_sigma: f64,
    /// Frequency sensitivity to supply-voltage deviation, per volt.
    pub voltage_coeff: f64,
    /// Voltage at which frequency equals `f_nom * (1 + static_drift)`.
    pub v_nom: f64,
}

impl Default for OscillatorModel {
    fn default() -> Self {
        // 31250 Hz so that one tick is exactly 32 us.
        OscillatorModel {
            f_nom: 31250.0,
            f_min: 31250.0 * (1.0 - 100e-6),
            f_max: 31250.0 * (1.0 + 100e-6),
            static_drift: 0.0,
            noise_sigma: 0.0,
            voltage_coeff: 0.0,
            v_nom: 3.0,
        }
    }
}

impl OscillatorModel {
    /// Realized frequency for a given random-walk drift state and supply voltage.
    ///
    /// Total function: the result is always clamped into `[f_min, f_max]`.
    pub fn frequency_at(&self, drift_state: f64, voltage: f64) -> f64 {
        let f = self.f_nom
            * (1.0 + self.static_drift + drift_state + self.voltage_coeff * (voltage - self.v_nom));
        f.clamp(self.f_min, self.f_max)
    }

    /// Duration of one nominal tick in microseconds.
    pub fn tick_us(&self) -> f64 {
        1.0e6 / self.f_nom
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.f_min <= self.f_nom && self.f_nom <= self.f_max) {
            return Err(format!(
                "oscillator bounds must satisfy f_min <= f_nom <= f_max (got {} <= {} <= {})",
                self.f_min, self.f_nom, self.f_max
            ));
        }
        if self.f_min <= 0.0 {
            return Err("oscillator f_min must be positive".into());
        }
        if self.noise_sigma < 0.0 {
            return Err("oscillator noise_sigma must be non-negative".into());
        }
        Ok(())
    }
}

/// The tag's quantized tick counter.
///
/// The counter reads `floor` of the accumulated oscillator phase since the
/// last power-on. Optional 16-bit wraparound mirrors the tag's hardware
/// timer register.
#[derive(Debug, Clone)]
pub struct LocalClock {
    pub model: OscillatorModel,
    /// Integrated frequency since power-on, in tick-fractions.
    accumulated_phase: f64,
    /// Counter value (unwrapped); `read()` applies wraparound if enabled.
    counter: u64,
    /// Power-on instant, reference microseconds.
    t0_us: u64,
    /// Current random-walk drift state (fraction of f_nom).
    drift_state: f64,
    /// Wrap reads at 2^16 like the hardware timer.
    pub wrap_16bit: bool,
}

impl LocalClock {
    pub fn new(model: OscillatorModel, t0_us: u64) -> Self {
        LocalClock {
            model,
            accumulated_phase: 0.0,
            counter: 0,
            t0_us,
            drift_state: 0.0,
            wrap_16bit: false,
        }
    }

    /// Power-on reset: phase and counter restart from zero at `t0_us`.
    /// The random-walk drift state persists (it belongs to the crystal,
    /// not to the power domain).
    pub fn reset(&mut self, t0_us: u64) {
        self.accumulated_phase = 0.0;
        self.counter = 0;
        self.t0_us = t0_us;
    }

    /// Advance the clock by `dt` seconds at the given supply voltage.
    ///
    /// `dt` must be no larger than the simulator step so the frequency can
    /// be treated as constant within it. The drift state performs one
    /// reflected random-walk step with std-dev `noise_sigma * sqrt(dt)`.
    pub fn advance<R: Rng + ?Sized>(&mut self, dt: f64, voltage: f64, rng: &mut R) {
        debug_assert!(dt > 0.0);
        let f = self.model.frequency_at(self.drift_state, voltage);
        self.accumulated_phase += f * dt;
        self.counter = self.accumulated_phase as u64;
        if self.model.noise_sigma > 0.0 {
            let step = Normal::new(0.0, self.model.noise_sigma * dt.sqrt())
                .expect("noise_sigma is finite and non-negative")
                .sample(rng);
            let bound = (self.model.f_max - self.model.f_nom) / self.model.f_nom;
            self.drift_state = reflect(self.drift_state + step, bound.abs());
        }
    }

    /// Current counter reading (C_w), with 16-bit wraparound if enabled.
    pub fn read(&self) -> u64 {
        if self.wrap_16bit {
            self.counter % (1 << 16)
        } else {
            self.counter
        }
    }

    pub fn accumulated_phase(&self) -> f64 {
        self.accumulated_phase
    }

    pub fn t0_us(&self) -> u64 {
        self.t0_us
    }

    pub fn drift_state(&self) -> f64 {
        self.drift_state
    }
}

/// Reflect `x` into [-bound, bound].
fn reflect(x: f64, bound: f64) -> f64 {
    if bound == 0.0 {
        return 0.0;
    }
    let mut v = x;
    while v > bound || v < -bound {
        if v > bound {
            v = 2.0 * bound - v;
        } else {
            v = -2.0 * bound - v;
        }
    }
    v
}

/// The reader's drift-free reference clock, microseconds since epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReferenceClock {
    pub resolution_us: u64,
    value_us: u64,
}

impl ReferenceClock {
    pub fn new() -> Self {
        ReferenceClock {
            resolution_us: 1,
            value_us: 0,
        }
    }

    pub fn now_us(&self) -> u64 {
        self.value_us
    }

    pub fn advance_us(&mut self, dt_us: u64) {
        self.value_us += dt_us;
    }

    pub fn set_us(&mut self, t_us: u64) {
        debug_assert!(t_us >= self.value_us);
        self.value_us = t_us;
    }
}

impl Default for ReferenceClock {
    fn default() -> Self {
        Self::new()
    }
}
