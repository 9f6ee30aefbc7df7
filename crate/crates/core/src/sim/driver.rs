//! Synthetic drivers with hidden preference functions.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::SimError;
use crate::acquisition::EnvSample;
use crate::schema::{
    AutomationMode, EnvSchema, SetpointSchema, SetpointVector, AMBIENT_TEMP, SOLAR_LOAD,
};

/// `coefficient * (env[channel] - reference)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceTerm {
    pub channel: String,
    pub coefficient: f64,
    #[serde(default)]
    pub reference: f64,
}

/// Affine preference: `base + sum(terms)`, clamped to the setpoint bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preference {
    pub base: f64,
    #[serde(default)]
    pub terms: Vec<PreferenceTerm>,
}

impl Preference {
    pub fn constant(base: f64) -> Self {
        Self { base, terms: vec![] }
    }

    pub fn with_term(mut self, channel: &str, coefficient: f64, reference: f64) -> Self {
        self.terms.push(PreferenceTerm {
            channel: channel.to_string(),
            coefficient,
            reference,
        });
        self
    }

    pub fn evaluate(&self, env: &[f64], schema: &EnvSchema) -> Result<f64, SimError> {
        self.terms.iter().try_fold(self.base, |acc, term| {
            let idx = schema
                .index_of(&term.channel)
                .ok_or_else(|| SimError::UnknownChannel(term.channel.clone()))?;
            Ok(acc + term.coefficient * (env[idx] - term.reference))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "policy")]
pub enum AcceptancePolicy {
    AlwaysAccept,
    /// Reject the first `k - 1` proposals for a setpoint, accept the k-th.
    AcceptAfterKProposals { k: u32 },
    Never,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriverModel {
    pub preferences: Vec<Preference>,
    pub discomfort_tolerance: Vec<f64>,
    pub reaction_delay_s: f64,
    pub adjustment_noise_std: Vec<f64>,
    pub acceptance: AcceptancePolicy,
    /// An automated setpoint that stays more than `release_factor *
    /// tolerance` away from the preference is taken back. `None` never
    /// releases.
    #[serde(default)]
    pub release_factor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DriverAction {
    Adjust { index: usize, value: f64 },
    AcceptHandover(usize),
    RejectHandover(usize),
    Release(usize),
}

impl DriverModel {
    /// Cabin temperature `24 - 0.2 * (ambient - 20)` with matching seat and
    /// panel heating habits.
    pub fn reference() -> Self {
        Self::archetype(24.0, 0.35, 0.3)
    }

    pub fn archetype(temp_at_20: f64, seat_at_15: f64, panel_at_15: f64) -> Self {
        Self {
            preferences: vec![
                Preference::constant(temp_at_20).with_term(AMBIENT_TEMP, -0.2, 20.0),
                Preference::constant(seat_at_15).with_term(AMBIENT_TEMP, -0.04, 15.0),
                Preference::constant(panel_at_15)
                    .with_term(AMBIENT_TEMP, -0.025, 15.0)
                    .with_term(SOLAR_LOAD, -0.0004, 200.0),
            ],
            discomfort_tolerance: vec![0.3, 0.05, 0.05],
            reaction_delay_s: 30.0,
            adjustment_noise_std: vec![0.1, 0.015, 0.015],
            acceptance: AcceptancePolicy::AlwaysAccept,
            release_factor: Some(4.0),
        }
    }

    pub fn validate(&self, setpoints: &SetpointSchema) -> Result<(), SimError> {
        let n = setpoints.len();
        if self.preferences.len() != n || self.discomfort_tolerance.len() != n || self.adjustment_noise_std.len() != n
        {
            return Err(SimError::InvalidScenario(format!(
                "driver needs exactly {n} preferences, tolerances and noise levels"
            )));
        }
        if self.discomfort_tolerance.iter().any(|t| !(*t > 0.0)) {
            return Err(SimError::InvalidScenario("discomfort tolerance must be positive".into()));
        }
        if self.adjustment_noise_std.iter().any(|s| !(*s >= 0.0)) {
            return Err(SimError::InvalidScenario("noise std must be non-negative".into()));
        }
        if !(self.reaction_delay_s >= 0.0) {
            return Err(SimError::InvalidScenario("reaction delay must be non-negative".into()));
        }
        Ok(())
    }

    /// Desired setpoints for `env`, clamped to the schema bounds.
    pub fn desired(&self, env: &[f64], env_schema: &EnvSchema, sp: &SetpointSchema) -> Result<Vec<f64>, SimError> {
        self.preferences
            .iter()
            .zip(&sp.setpoints)
            .map(|(p, c)| p.evaluate(env, env_schema).map(|v| c.clamp(v)))
            .collect()
    }
}

/// Mutable per-run driver state.
#[derive(Debug, Clone)]
pub struct DriverState {
    discomfort_since: Vec<Option<f64>>,
    proposals_seen: Vec<u32>,
    rng: ChaCha8Rng,
}

impl DriverState {
    pub fn new(setpoints: usize, seed: u64) -> Self {
        Self {
            discomfort_since: vec![None; setpoints],
            proposals_seen: vec![0; setpoints],
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    fn noise(&mut self, std: f64) -> f64 {
        if std <= 0.0 {
            return 0.0;
        }
        let n = Normal::new(0.0, std).expect("positive std");
        n.sample(&mut self.rng).clamp(-3.0 * std, 3.0 * std)
    }
}

/// One decision step of the synthetic driver at time `t`.
///
/// A user-controlled setpoint further than its tolerance from the
/// preference, continuously for at least the reaction delay, is adjusted to
/// the preference plus noise (truncated at 3 sigma). Pending proposals are
/// answered according to the acceptance policy.
pub fn driver_step(
    driver: &DriverModel,
    state: &mut DriverState,
    env: &EnvSample,
    current: &SetpointVector,
    pending_proposals: &[usize],
    t: f64,
    env_schema: &EnvSchema,
    sp_schema: &SetpointSchema,
) -> Result<Vec<DriverAction>, SimError> {
    if env.values.len() != env_schema.len() {
        return Err(SimError::InvalidScenario(format!(
            "environment sample has {} channels, schema {}",
            env.values.len(),
            env_schema.len()
        )));
    }
    let desired = driver.desired(&env.values, env_schema, sp_schema)?;
    let mut actions = Vec::new();

    for &i in pending_proposals {
        state.proposals_seen[i] += 1;
        let accept = match driver.acceptance {
            AcceptancePolicy::AlwaysAccept => true,
            AcceptancePolicy::AcceptAfterKProposals { k } => state.proposals_seen[i] >= k,
            AcceptancePolicy::Never => false,
        };
        actions.push(if accept {
            DriverAction::AcceptHandover(i)
        } else {
            DriverAction::RejectHandover(i)
        });
    }

    for i in 0..current.len() {
        let tolerance = match current.automation[i] {
            AutomationMode::Automated => match driver.release_factor {
                Some(f) => f * driver.discomfort_tolerance[i],
                None => {
                    state.discomfort_since[i] = None;
                    continue;
                }
            },
            _ => driver.discomfort_tolerance[i],
        };
        if (current.values[i] - desired[i]).abs() <= tolerance {
            state.discomfort_since[i] = None;
            continue;
        }
        let since = *state.discomfort_since[i].get_or_insert(t);
        if t - since < driver.reaction_delay_s {
            continue;
        }
        state.discomfort_since[i] = None;
        if current.automation[i] == AutomationMode::Automated {
            actions.push(DriverAction::Release(i));
        }
        let noise = state.noise(driver.adjustment_noise_std[i]);
        let value = sp_schema.setpoints[i].clamp(desired[i] + noise);
        actions.push(DriverAction::Adjust { index: i, value });
    }
    Ok(actions)
}
