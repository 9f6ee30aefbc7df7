//! Lumped-capacitance cabin model, integrated with explicit Euler.

use serde::{Deserialize, Serialize};

use super::SimError;

pub const TEMP_MIN: f64 = -40.0;
pub const TEMP_MAX: f64 = 90.0;
/// Largest step for which the default parameters stay stable.
pub const MAX_DT: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CabinState {
    pub cabin_temp: f64,
    pub seat_surface_temp: f64,
    pub panel_surface_temp: f64,
    pub cabin_humidity: f64,
    pub time: f64,
    /// Set when any value had to be clamped into its physical range.
    #[serde(default)]
    pub clamped: bool,
}

impl CabinState {
    /// Cabin soaked to a uniform temperature.
    pub fn soaked(temp: f64, humidity: f64) -> Self {
        Self {
            cabin_temp: temp,
            seat_surface_temp: temp,
            panel_surface_temp: temp,
            cabin_humidity: humidity,
            time: 0.0,
            clamped: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VentMode {
    Heat,
    Cool,
}

impl VentMode {
    pub fn sign(self) -> f64 {
        match self {
            VentMode::Heat => 1.0,
            VentMode::Cool => -1.0,
        }
    }
}

/// Commanded actuator levels in `[0, 1]`. Power is `level * max_power`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub vent_level: f64,
    pub vent_mode: VentMode,
    pub seat_level: f64,
    pub panel_level: f64,
}

impl Default for ActuatorState {
    fn default() -> Self {
        Self {
            vent_level: 0.0,
            vent_mode: VentMode::Heat,
            seat_level: 0.0,
            panel_level: 0.0,
        }
    }
}

impl ActuatorState {
    pub fn vent_power(&self, p: &ThermalParams) -> f64 {
        self.vent_level * p.vent_max_w
    }

    pub fn seat_power(&self, p: &ThermalParams) -> f64 {
        self.seat_level * p.seat_max_w
    }

    pub fn panel_power(&self, p: &ThermalParams) -> f64 {
        self.panel_level * p.panel_max_w
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ThermalParams {
    /// Cabin air plus interior heat capacity, J/K.
    pub heat_capacity: f64,
    /// Envelope conductance to ambient, W/K.
    pub k_env: f64,
    pub vent_efficiency: f64,
    pub vent_max_w: f64,
    pub seat_max_w: f64,
    pub panel_max_w: f64,
    /// Solar gain, W per W/m2 of irradiance.
    pub solar_gain: f64,
    /// Surface to cabin conductances, W/K.
    pub k_seat: f64,
    pub k_panel: f64,
    /// Steady surface excess over cabin temperature per watt, K/W.
    pub seat_rise_per_w: f64,
    pub panel_rise_per_w: f64,
    pub seat_tau_s: f64,
    pub panel_tau_s: f64,
    pub humidity_tau_s: f64,
    /// Equilibrium humidity at 15 degC ambient, percent.
    pub humidity_base: f64,
    /// Change of equilibrium humidity per degC ambient above 15.
    pub humidity_slope: f64,
}

impl Default for ThermalParams {
    fn default() -> Self {
        Self {
            heat_capacity: 120_000.0,
            k_env: 100.0,
            vent_efficiency: 1.0,
            vent_max_w: 3000.0,
            seat_max_w: 150.0,
            panel_max_w: 400.0,
            solar_gain: 1.0,
            k_seat: 5.0,
            k_panel: 10.0,
            seat_rise_per_w: 0.1,
            panel_rise_per_w: 0.05,
            seat_tau_s: 120.0,
            panel_tau_s: 180.0,
            humidity_tau_s: 1800.0,
            humidity_base: 55.0,
            humidity_slope: -0.8,
        }
    }
}

pub fn humidity_equilibrium(ambient: f64, p: &ThermalParams) -> f64 {
    (p.humidity_base + p.humidity_slope * (ambient - 15.0)).clamp(5.0, 95.0)
}

/// Advance the cabin by `dt` seconds.
pub fn thermal_step(
    state: &CabinState,
    actuators: &ActuatorState,
    ambient: f64,
    solar: f64,
    dt: f64,
    p: &ThermalParams,
) -> Result<CabinState, SimError> {
    if !(dt > 0.0 && dt <= MAX_DT) {
        return Err(SimError::InvalidTimestep(dt));
    }
    let inputs = [
        state.cabin_temp,
        state.seat_surface_temp,
        state.panel_surface_temp,
        state.cabin_humidity,
        ambient,
        solar,
        actuators.vent_level,
        actuators.seat_level,
        actuators.panel_level,
    ];
    if inputs.iter().any(|v| !v.is_finite()) {
        return Err(SimError::NonFinite("thermal step input"));
    }

    let t = state.cabin_temp;
    let seat_power = actuators.seat_power(p);
    let panel_power = actuators.panel_power(p);
    let q = p.k_env * (ambient - t)
        + p.vent_efficiency * actuators.vent_power(p) * actuators.vent_mode.sign()
        + p.solar_gain * solar
        + p.k_seat * (state.seat_surface_temp - t)
        + p.k_panel * (state.panel_surface_temp - t);
    let cabin = t + dt / p.heat_capacity * q;

    let seat_eq = t + seat_power * p.seat_rise_per_w;
    let panel_eq = t + panel_power * p.panel_rise_per_w;
    let seat = state.seat_surface_temp + dt / p.seat_tau_s * (seat_eq - state.seat_surface_temp);
    let panel = state.panel_surface_temp + dt / p.panel_tau_s * (panel_eq - state.panel_surface_temp);
    let h_eq = humidity_equilibrium(ambient, p);
    let humidity = state.cabin_humidity + dt / p.humidity_tau_s * (h_eq - state.cabin_humidity);

    let mut clamped = false;
    let mut clamp = |v: f64, lo: f64, hi: f64| {
        if v < lo || v > hi {
            clamped = true;
        }
        v.clamp(lo, hi)
    };
    let next = CabinState {
        cabin_temp: clamp(cabin, TEMP_MIN, TEMP_MAX),
        seat_surface_temp: clamp(seat, TEMP_MIN, TEMP_MAX),
        panel_surface_temp: clamp(panel, TEMP_MIN, TEMP_MAX),
        cabin_humidity: clamp(humidity, 0.0, 100.0),
        time: state.time + dt,
        clamped: false,
    };
    Ok(CabinState { clamped, ..next })
}
