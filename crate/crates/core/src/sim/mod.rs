//! Cabin simulator, setpoint controller, synthetic drivers and the
//! closed-loop scenario runner.
//!
//! Everything here is test scaffolding for the estimator: the physics is a
//! first-order lumped model and the drivers follow affine preference
//! functions, so the learning target is known exactly.

pub mod control;
pub mod driver;
pub mod run;
pub mod scenario;
pub mod thermal;

use thiserror::Error;

use crate::acquisition::AcquisitionError;
use crate::estimator::{EstimatorError, HandoverError};

pub use control::{control_step, ControlParams};
pub use driver::{driver_step, AcceptancePolicy, DriverAction, DriverModel, DriverState, Preference};
pub use run::{
    run_scenario, ClosedLoop, EvalReport, IntervalMetrics, MetricsLog, RoundRecord, RunMode, RunOutput, RunSummary,
    TickEvents, TrainingMode,
};
pub use scenario::{Scenario, Seeds, SpeedProfile};
pub use thermal::{thermal_step, ActuatorState, CabinState, ThermalParams, VentMode};

/// Setpoint positions in the default setpoint schema.
pub const TARGET: usize = 0;
pub const SEAT: usize = 1;
pub const PANEL: usize = 2;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("timestep {0} s outside (0, 5]")]
    InvalidTimestep(f64),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown environment channel `{0}`")]
    UnknownChannel(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error(transparent)]
    Handover(#[from] HandoverError),
    #[error("step {step}: {source}")]
    AtStep { step: u64, source: Box<SimError> },
}

impl SimError {
    pub(crate) fn at_step(self, step: u64) -> Self {
        match self {
            e @ SimError::AtStep { .. } => e,
            e => SimError::AtStep {
                step,
                source: Box::new(e),
            },
        }
    }
}
