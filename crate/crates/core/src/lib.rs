//! Discrete-event simulator and library for clock synchronization between
//! an RFID reader (the reference clock) and intermittently powered
//! backscatter tags.
//!
//! Two synchronization engines are provided: a sender-receiver scheme that
//! fits a sliding-window least-squares line through (local tick, reference
//! time) pairs, and an event-based scheme in which an integral controller
//! tunes a rate multiplier from the tag's readings at the first and last
//! BlockWrite of each burst. Clock drift, transmission delay, event-period
//! jitter and power intermittency are all configurable models.

pub mod channel;
pub mod cli;
pub mod clock;
pub mod power;
pub mod sim;
pub mod sync;
pub mod trace_io;

pub use channel::{BurstRecord, DelayModel, EventPeriodModel, ExchangeRecord, TagUnpowered};
pub use clock::{LocalClock, OscillatorModel, ReferenceClock};
pub use power::{NvSnapshot, PowerModel, PowerMode, PowerStatus};
pub use sim::{
    compare_with_without, run_scenario, sweep_gain, Engine, InvalidConfig, MetricStep, RunMetrics,
    RunSummary, ScenarioConfig,
};
pub use sync::{convergence_bound, ls_regress, sync_error, ControllerState, RegressionState};
