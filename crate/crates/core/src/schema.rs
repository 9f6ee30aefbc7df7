//! Channel layouts for environment readings and setpoints.

use serde::{Deserialize, Serialize};

/// One named environment channel.
///
/// `scale` is the nominal spread of the channel, used to make distances
/// between samples comparable across units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvChannel {
    pub name: String,
    pub unit: String,
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSchema {
    pub id: String,
    pub channels: Vec<EnvChannel>,
}

pub const CABIN_TEMP: &str = "cabin_temp";
pub const AMBIENT_TEMP: &str = "ambient_temp";
pub const CABIN_HUMIDITY: &str = "cabin_humidity";
pub const SOLAR_LOAD: &str = "solar_load";
pub const VEHICLE_SPEED: &str = "vehicle_speed";

pub const TARGET_CABIN_TEMP: &str = "target_cabin_temp";
pub const SEAT_HEAT_LEVEL: &str = "seat_heat_level";
pub const PANEL_HEAT_LEVEL: &str = "panel_heat_level";

impl EnvSchema {
    pub fn len(&self) -> usize {
        self.channels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.channels.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn scales(&self) -> Vec<f64> {
        self.channels.iter().map(|c| c.scale).collect()
    }
}

impl Default for EnvSchema {
    fn default() -> Self {
        let ch = |name: &str, unit: &str, scale: f64| EnvChannel {
            name: name.to_string(),
            unit: unit.to_string(),
            scale,
        };
        Self {
            id: "cabin-env-v1".to_string(),
            channels: vec![
                ch(CABIN_TEMP, "degC", 10.0),
                ch(AMBIENT_TEMP, "degC", 10.0),
                ch(CABIN_HUMIDITY, "percent", 20.0),
                ch(SOLAR_LOAD, "W/m2", 300.0),
                ch(VEHICLE_SPEED, "m/s", 10.0),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointChannel {
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
}

impl SetpointChannel {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.min, self.max)
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.min && v <= self.max
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointSchema {
    pub setpoints: Vec<SetpointChannel>,
}

impl SetpointSchema {
    pub fn len(&self) -> usize {
        self.setpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.setpoints.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.setpoints.iter().position(|c| c.name == name)
    }

    /// Distance scales for setpoints: the width of each bounds interval.
    pub fn scales(&self) -> Vec<f64> {
        self.setpoints.iter().map(|c| c.span().max(1e-9)).collect()
    }

    pub fn bounds(&self) -> Vec<(f64, f64)> {
        self.setpoints.iter().map(|c| (c.min, c.max)).collect()
    }
}

impl Default for SetpointSchema {
    fn default() -> Self {
        let sp = |name: &str, unit: &str, min: f64, max: f64| SetpointChannel {
            name: name.to_string(),
            unit: unit.to_string(),
            min,
            max,
        };
        Self {
            setpoints: vec![
                sp(TARGET_CABIN_TEMP, "degC", 16.0, 30.0),
                sp(SEAT_HEAT_LEVEL, "fraction", 0.0, 1.0),
                sp(PANEL_HEAT_LEVEL, "fraction", 0.0, 1.0),
            ],
        }
    }
}

/// Who currently owns a setpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AutomationMode {
    Manual,
    Proposed,
    Automated,
}

impl AutomationMode {
    /// Manual and proposed setpoints are still driven by the user.
    pub fn is_user_controlled(self) -> bool {
        !matches!(self, AutomationMode::Automated)
    }
}

/// The full set of controllable setpoints together with their owners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SetpointVector {
    pub values: Vec<f64>,
    pub automation: Vec<AutomationMode>,
    pub bounds: Vec<(f64, f64)>,
}

impl SetpointVector {
    /// All-manual vector with values clamped into `schema` bounds.
    pub fn manual(schema: &SetpointSchema, values: &[f64]) -> Self {
        let values = schema
            .setpoints
            .iter()
            .zip(values)
            .map(|(c, &v)| c.clamp(v))
            .collect();
        Self {
            values,
            automation: vec![AutomationMode::Manual; schema.len()],
            bounds: schema.bounds(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn manual_mask(&self) -> Vec<bool> {
        self.automation.iter().map(|m| m.is_user_controlled()).collect()
    }

    pub fn in_bounds(&self) -> bool {
        self.values
            .iter()
            .zip(&self.bounds)
            .all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}
