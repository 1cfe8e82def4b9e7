//! Intermittent RF harvesting: supply-voltage trajectories, tag
//! death/rebirth with hysteresis, and non-volatile checkpointing of the
//! controller's rate multiplier.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::sync::ControllerState;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("non-volatile snapshot failed checksum validation")]
pub struct CorruptSnapshot;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerMode {
    /// Bench supply: voltage pinned at `v_const`.
    Constant,
    /// RF harvesting: sawtooth charge/discharge with additive ripple.
    Harvested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerModel {
    pub mode: PowerMode,
    pub v_const: f64,
    /// Turn-on threshold, volts.
    pub v_on: f64,
    /// Brown-out threshold, volts.
    pub v_off: f64,
    /// Storage-capacitor charge rate while the tag is off, volts/s.
    pub charge_rate: f64,
    /// Net discharge rate while the tag is active, volts/s.
    pub discharge_rate_active: f64,
    /// Per-step supply noise in harvested mode, volts per sqrt(s).
    pub ripple_sigma: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            mode: PowerMode::Constant,
            v_const: 3.0,
            v_on: 2.4,
            v_off: 1.8,
            charge_rate: 1.0,
            discharge_rate_active: 0.2,
            ripple_sigma: 0.0,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<(), String> {
        if self.v_off >= self.v_on {
            return Err("power thresholds must satisfy v_off < v_on".into());
        }
        if self.charge_rate <= 0.0 || self.discharge_rate_active <= 0.0 {
            return Err("power charge/discharge rates must be positive".into());
        }
        if self.ripple_sigma < 0.0 {
            return Err("power ripple_sigma must be non-negative".into());
        }
        Ok(())
    }
}

/// Supply-voltage integration state. `active` tells the harvested model
/// whether the tag is currently loading the storage capacitor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoltageState {
    pub volts: f64,
    pub active: bool,
}

impl VoltageState {
    pub fn new(volts: f64) -> Self {
        VoltageState {
            volts,
            active: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerStatus {
    On,
    Off,
}

/// Outcome of one hysteresis evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerTransition {
    On,
    Off,
    Died,
    Revived,
}

impl PowerTransition {
    pub fn status(self) -> PowerStatus {
        match self {
            PowerTransition::On | PowerTransition::Revived => PowerStatus::On,
            PowerTransition::Off | PowerTransition::Died => PowerStatus::Off,
        }
    }
}

/// Advance the supply voltage by `dt` seconds and return the new value.
///
/// Constant mode pins the voltage. Harvested mode charges while the tag
/// is off and discharges while it is active, plus Gaussian ripple;
/// clamped at zero.
pub fn step_voltage<R: Rng + ?Sized>(
    model: &PowerModel,
    state: &mut VoltageState,
    dt: f64,
    rng: &mut R,
) -> f64 {
    debug_assert!(dt > 0.0);
    match model.mode {
        PowerMode::Constant => {
            state.volts = model.v_const;
        }
        PowerMode::Harvested => {
            let rate = if state.active {
                -model.discharge_rate_active
            } else {
                model.charge_rate
            };
            let mut v = state.volts + rate * dt;
            if model.ripple_sigma > 0.0 {
                v += Normal::new(0.0, model.ripple_sigma * dt.sqrt())
                    .expect("validated model")
                    .sample(rng);
            }
            state.volts = v.max(0.0);
        }
    }
    state.volts
}

/// Hysteresis power-state transition: off turns on only at `v_on`, on
/// turns off only below `v_off`.
pub fn power_state(voltage: f64, previous: PowerStatus, model: &PowerModel) -> PowerTransition {
    match previous {
        PowerStatus::On => {
            if voltage < model.v_off {
                PowerTransition::Died
            } else {
                PowerTransition::On
            }
        }
        PowerStatus::Off => {
            if voltage >= model.v_on {
                PowerTransition::Revived
            } else {
                PowerTransition::Off
            }
        }
    }
}

/// Checkpoint of the synchronization state held in non-volatile memory.
/// The rate multiplier is the entire state worth persisting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NvSnapshot {
    pub rate_multiplier: f64,
    pub checksum: u32,
}

/// FNV-1a over the little-endian bit pattern of the value.
fn checksum_of(value: f64) -> u32 {
    let mut hash: u32 = 0x811c_9dc5;
    for byte in value.to_le_bytes() {
        hash ^= byte as u32;
        hash = hash.wrapping_mul(0x0100_0193);
    }
    hash
}

/// Save the controller's rate multiplier to a checksummed snapshot.
pub fn persist(state: &ControllerState) -> NvSnapshot {
    NvSnapshot {
        rate_multiplier: state.rate_multiplier,
        checksum: checksum_of(state.rate_multiplier),
    }
}

/// Recover the rate multiplier from a snapshot. Only the rate multiplier
/// survives; `t_f` and the software-clock progress are volatile.
pub fn restore(snapshot: &NvSnapshot) -> Result<f64, CorruptSnapshot> {
    if checksum_of(snapshot.rate_multiplier) != snapshot.checksum {
        return Err(CorruptSnapshot);
    }
    Ok(snapshot.rate_multiplier)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_mode_pins_voltage() {
        let model = PowerModel::default();
        let mut st = VoltageState::new(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            assert_eq!(step_voltage(&model, &mut st, 0.01, &mut rng), 3.0);
        }
    }

    #[test]
    fn harvested_linear_ramp() {
        let model = PowerModel {
            mode: PowerMode::Harvested,
            charge_rate: 1.0,
            ripple_sigma: 0.0,
            ..PowerModel::default()
        };
        let mut st = VoltageState::new(model.v_off);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = step_voltage(&model, &mut st, 0.5, &mut rng);
        assert!((v - (model.v_off + 0.5)).abs() < 1e-12);
    }

    #[test]
    fn harvested_discharges_when_active() {
        let model = PowerModel {
            mode: PowerMode::Harvested,
            discharge_rate_active: 0.2,
            ripple_sigma: 0.0,
            ..PowerModel::default()
        };
        let mut st = VoltageState::new(3.0);
        st.active = true;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = step_voltage(&model, &mut st, 1.0, &mut rng);
        assert!((v - 2.8).abs() < 1e-12);
    }

    #[test]
    fn hysteresis_transitions() {
        let model = PowerModel::default();
        assert_eq!(
            power_state(model.v_off - 0.01, PowerStatus::On, &model),
            PowerTransition::Died
        );
        assert_eq!(
            power_state(model.v_on - 0.01, PowerStatus::Off, &model),
            PowerTransition::Off
        );
        assert_eq!(
            power_state(model.v_on, PowerStatus::Off, &model),
            PowerTransition::Revived
        );
        // Between thresholds, state holds.
        assert_eq!(
            power_state(2.0, PowerStatus::On, &model),
            PowerTransition::On
        );
    }

    #[test]
    fn no_revival_without_reaching_v_on() {
        let model = PowerModel::default();
        let mut status = PowerStatus::Off;
        for v in [1.9, 2.0, 2.1, 2.2, 2.3, 2.39] {
            let t = power_state(v, status, &model);
            assert_ne!(t, PowerTransition::Revived);
            status = t.status();
        }
    }

    #[test]
    fn persist_restore_round_trip() {
        for alpha in [1.0, 0.986_083_217_453_201_4, 1.0097, f64::MIN_POSITIVE] {
            let mut c = ControllerState::new(1e-4, 7086.0, 0.5, 1.5);
            c.rate_multiplier = alpha;
            let snap = persist(&c);
            assert_eq!(restore(&snap).unwrap().to_bits(), alpha.to_bits());
        }
    }

    #[test]
    fn flipped_bit_detected() {
        let c = ControllerState::new(1e-4, 7086.0, 0.5, 1.5);
        let mut snap = persist(&c);
        snap.rate_multiplier = f64::from_bits(snap.rate_multiplier.to_bits() ^ 1);
        assert_eq!(restore(&snap), Err(CorruptSnapshot));
    }
}
