//! Scenario documents and the environment generator they describe.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::control::ControlParams;
use super::driver::DriverModel;
use super::thermal::{ThermalParams, MAX_DT};
use super::SimError;
use crate::acquisition::AcquisitionConfig;
use crate::estimator::EstimatorConfig;
use crate::schema::SetpointSchema;

/// Independent seeds for every random stream of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub driver: u64,
    pub environment: u64,
    pub acquisition: u64,
    pub training: u64,
}

impl Seeds {
    /// Derive all four streams from one number.
    pub fn from_master(seed: u64) -> Self {
        let mut s = seed;
        let mut next = || {
            // splitmix64
            s = s.wrapping_add(0x9E37_79B9_7F4A_7C15);
            let mut z = s;
            z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
            z ^ (z >> 31)
        };
        Self {
            driver: next(),
            environment: next(),
            acquisition: next(),
            training: next(),
        }
    }
}

impl Default for Seeds {
    fn default() -> Self {
        Self::from_master(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum SpeedProfile {
    Constant {
        value: f64,
    },
    /// Mean-reverting random speed, m/s, floored at zero.
    DriveCycle {
        mean: f64,
        std: f64,
        tau_s: f64,
    },
}

/// Slowly varying attenuation of the solar profile in `[1 - depth, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudModel {
    pub depth: f64,
    pub tau_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialConditions {
    /// Defaults to the ambient temperature at t = 0 (soaked cabin).
    pub cabin_temp: Option<f64>,
    pub cabin_humidity: f64,
    /// Defaults to 22 degC with seat and panel heating off.
    pub setpoints: Option<Vec<f64>>,
}

impl Default for InitialConditions {
    fn default() -> Self {
        Self {
            cabin_temp: None,
            cabin_humidity: 45.0,
            setpoints: None,
        }
    }
}

fn default_report_interval() -> f64 {
    3600.0
}

fn default_training_interval() -> f64 {
    300.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub name: String,
    pub duration_s: f64,
    pub timestep_s: f64,
    /// Piecewise-linear `[time_s, degC]` breakpoints, held flat outside.
    pub ambient: Vec<(f64, f64)>,
    /// Piecewise-linear `[time_s, W/m2]` breakpoints.
    pub solar: Vec<(f64, f64)>,
    #[serde(default)]
    pub cloud: Option<CloudModel>,
    pub speed: SpeedProfile,
    #[serde(default)]
    pub initial: InitialConditions,
    pub driver: DriverModel,
    pub seeds: Seeds,
    #[serde(default = "default_report_interval")]
    pub report_interval_s: f64,
    #[serde(default = "default_training_interval")]
    pub training_interval_s: f64,
    #[serde(default)]
    pub thermal: ThermalParams,
    #[serde(default)]
    pub control: ControlParams,
    #[serde(default)]
    pub acquisition: AcquisitionConfig,
    /// Its `seed` is replaced by `seeds.training` when the scenario runs.
    #[serde(default)]
    pub estimator: EstimatorConfig,
}

impl Scenario {
    /// Two simulated days of commuting weather: ambient swings between
    /// about 2 and 28 degC on a 6 h cycle, sunny middays with passing
    /// clouds, stop-and-go traffic. Out to `duration_s` the pattern repeats.
    pub fn reference(duration_s: f64) -> Self {
        let period = 6.0 * 3600.0;
        let mut ambient = Vec::new();
        let mut solar = Vec::new();
        let cycles = (duration_s / period).ceil().max(1.0) as usize;
        for c in 0..cycles {
            let t0 = c as f64 * period;
            // slightly different extremes per cycle so that the cycles are not
            // exact copies of each other
            let lo = 2.0 + 2.0 * (c % 3) as f64;
            let hi = 24.0 + 2.0 * ((c + 1) % 3) as f64;
            ambient.push((t0, lo));
            ambient.push((t0 + 0.5 * period, hi));
            solar.push((t0, 0.0));
            solar.push((t0 + 0.5 * period, 650.0));
        }
        let end = cycles as f64 * period;
        ambient.push((end, 2.0 + 2.0 * (cycles % 3) as f64));
        solar.push((end, 0.0));
        Self {
            name: "reference".into(),
            duration_s,
            timestep_s: 1.0,
            ambient,
            solar,
            cloud: Some(CloudModel {
                depth: 0.4,
                tau_s: 600.0,
            }),
            speed: SpeedProfile::DriveCycle {
                mean: 14.0,
                std: 6.0,
                tau_s: 60.0,
            },
            initial: InitialConditions::default(),
            driver: DriverModel::reference(),
            seeds: Seeds::from_master(1),
            report_interval_s: 3600.0,
            training_interval_s: 300.0,
            thermal: ThermalParams::default(),
            control: ControlParams::default(),
            acquisition: AcquisitionConfig::default(),
            estimator: EstimatorConfig::default(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seeds = Seeds::from_master(seed);
        self
    }

    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de)
            .map_err(|e| SimError::InvalidScenario(format!("{}: {}", e.path(), e.inner())))?;
        s.validate(&SetpointSchema::default())?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn steps(&self) -> u64 {
        (self.duration_s / self.timestep_s).round() as u64
    }

    pub fn validate(&self, setpoints: &SetpointSchema) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return bad("duration_s must be a non-negative number".into());
        }
        if !(self.timestep_s > 0.0 && self.timestep_s <= MAX_DT) {
            return bad(format!("timestep_s must lie in (0, {MAX_DT}]"));
        }
        for (name, points) in [("ambient", &self.ambient), ("solar", &self.solar)] {
            if points.is_empty() {
                return bad(format!("{name} needs at least one breakpoint"));
            }
            if points.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                return bad(format!("{name} has non-finite breakpoints"));
            }
            if let Some(w) = points.windows(2).position(|w| w[1].0 <= w[0].0) {
                return bad(format!("{name} breakpoint {} is not after the previous one", w + 1));
            }
        }
        if !(self.report_interval_s > 0.0) || !(self.training_interval_s > 0.0) {
            return bad("report and training intervals must be positive".into());
        }
        if let Some(c) = &self.cloud {
            if !(0.0..=1.0).contains(&c.depth) || !(c.tau_s > 0.0) {
                return bad("cloud depth must be in [0, 1] and tau positive".into());
            }
        }
        match self.speed {
            SpeedProfile::Constant { value } if !(value >= 0.0) => return bad("speed must be non-negative".into()),
            SpeedProfile::DriveCycle { mean, std, tau_s } if !(mean >= 0.0 && std >= 0.0 && tau_s > 0.0) => {
                return bad("drive cycle needs mean >= 0, std >= 0, tau_s > 0".into())
            }
            _ => {}
        }
        if let Some(sp) = &self.initial.setpoints {
            if sp.len() != setpoints.len() {
                return bad(format!("initial setpoints need {} values", setpoints.len()));
            }
        }
        self.acquisition
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))?;
        self.driver.validate(setpoints)
    }
}

/// Linear interpolation between breakpoints, constant beyond the ends.
pub fn interpolate(points: &[(f64, f64)], t: f64) -> f64 {
    let i = points.partition_point(|p| p.0 <= t);
    if i == 0 {
        return points[0].1;
    }
    if i == points.len() {
        return points[i - 1].1;
    }
    let (t0, v0) = points[i - 1];
    let (t1, v1) = points[i];
    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
}

/// Ambient, solar and speed traces for one scenario run.
#[derive(Debug, Clone)]
pub struct Environment {
    ambient: Vec<(f64, f64)>,
    solar: Vec<(f64, f64)>,
    cloud: Option<CloudModel>,
    speed_profile: SpeedProfile,
    cloud_state: f64,
    speed: f64,
    rng: ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Weather {
    pub ambient: f64,
    pub solar: f64,
    pub speed: f64,
}

impl Environment {
    pub fn new(s: &Scenario) -> Self {
        let speed = match s.speed {
            SpeedProfile::Constant { value } => value,
            SpeedProfile::DriveCycle { mean, .. } => mean,
        };
        Self {
            ambient: s.ambient.clone(),
            solar: s.solar.clone(),
            cloud: s.cloud.clone(),
            speed_profile: s.speed.clone(),
            cloud_state: 0.0,
            speed,
            rng: ChaCha8Rng::seed_from_u64(s.seeds.environment),
        }
    }

    pub fn current(&self, t: f64) -> Weather {
        let attenuation = match &self.cloud {
            Some(c) => 1.0 - c.depth * self.cloud_state,
            None => 1.0,
        };
        Weather {
            ambient: interpolate(&self.ambient, t),
            solar: (interpolate(&self.solar, t) * attenuation).max(0.0),
            speed: self.speed,
        }
    }

    /// Advance the random processes by `dt`.
    pub fn advance(&mut self, dt: f64) {
        if let Some(c) = &self.cloud {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            let a = dt / c.tau_s;
            self.cloud_state = (self.cloud_state + a * (0.5 - self.cloud_state) + 0.5 * (2.0 * a).sqrt() * n).clamp(0.0, 1.0);
        }
        if let SpeedProfile::DriveCycle { mean, std, tau_s } = self.speed_profile {
            let n: f64 = StandardNormal.sample(&mut self.rng);
            let a = dt / tau_s;
            self.speed = (self.speed + a * (mean - self.speed) + std * (2.0 * a).sqrt() * n).max(0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation() {
        let p = [(0.0, 10.0), (10.0, 20.0), (20.0, 0.0)];
        assert_eq!(interpolate(&p, -5.0), 10.0);
        assert_eq!(interpolate(&p, 5.0), 15.0);
        assert_eq!(interpolate(&p, 10.0), 20.0);
        assert_eq!(interpolate(&p, 15.0), 10.0);
        assert_eq!(interpolate(&p, 99.0), 0.0);
        assert_eq!(interpolate(&[(3.0, 7.0)], 0.0), 7.0);
    }

    #[test]
    fn reference_is_valid_and_round_trips() {
        let s = Scenario::reference(20.0 * 3600.0);
        s.validate(&SetpointSchema::default()).unwrap();
        let back = Scenario::from_json(&s.to_json()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn rejects_bad_documents() {
        let s = Scenario::reference(3600.0);
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v["timestep_s"] = 10.0.into();
        assert!(Scenario::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v["ambient"] = serde_json::json!([[0.0, 1.0], [0.0, 2.0]]);
        assert!(Scenario::from_json(&v.to_string()).is_err());
        let mut v: serde_json::Value = serde_json::from_str(&s.to_json()).unwrap();
        v["surprise"] = 1.into();
        let err = Scenario::from_json(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("surprise"), "{err}");
        assert!(Scenario::from_json("{").is_err());
    }

    #[test]
    fn environment_is_seeded() {
        let s = Scenario::reference(3600.0);
        let trace = |s: &Scenario| {
            let mut e = Environment::new(s);
            (0..500)
                .map(|k| {
                    e.advance(1.0);
                    e.current(k as f64)
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(trace(&s), trace(&s));
        assert_ne!(trace(&s), trace(&s.clone().with_seed(77)));
        assert!(trace(&s).iter().all(|w| w.speed >= 0.0 && w.solar >= 0.0));
    }

    #[test]
    fn master_seed_streams_differ() {
        let s = Seeds::from_master(3);
        let all = [s.driver, s.environment, s.acquisition, s.training];
        for i in 0..4 {
            for j in i + 1..4 {
                assert_ne!(all[i], all[j]);
            }
        }
    }
}
