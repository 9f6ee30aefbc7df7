//! Setpoint-tracking control unit.

use serde::{Deserialize, Serialize};

use super::thermal::{ActuatorState, CabinState, VentMode};
use super::{PANEL, SEAT, TARGET};
use crate::schema::SetpointVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControlParams {
    /// Vent level per kelvin of cabin error.
    pub kp: f64,
    /// Largest change of seat/panel level per second.
    pub slew_per_s: f64,
}

impl Default for ControlParams {
    fn default() -> Self {
        Self {
            kp: 0.2,
            slew_per_s: 0.5,
        }
    }
}

/// Move `level` toward `command` by at most `max_step`.
pub fn slew(level: f64, command: f64, max_step: f64) -> f64 {
    let diff = command - level;
    if diff.abs() <= max_step + 1e-12 {
        command
    } else {
        level + max_step.copysign(diff)
    }
}

/// Proportional vent control on the cabin error plus rate-limited
/// tracking of the seat and panel level setpoints.
pub fn control_step(
    setpoints: &SetpointVector,
    state: &CabinState,
    actuators: &ActuatorState,
    dt: f64,
    params: &ControlParams,
) -> ActuatorState {
    let error = setpoints.values[TARGET] - state.cabin_temp;
    let max_step = params.slew_per_s * dt;
    ActuatorState {
        vent_level: (params.kp * error.abs()).clamp(0.0, 1.0),
        vent_mode: if error >= 0.0 { VentMode::Heat } else { VentMode::Cool },
        seat_level: slew(actuators.seat_level, setpoints.values[SEAT].clamp(0.0, 1.0), max_step),
        panel_level: slew(actuators.panel_level, setpoints.values[PANEL].clamp(0.0, 1.0), max_step),
    }
}
