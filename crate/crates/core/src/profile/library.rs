//! Pretrained profiles for cold start, one per driver archetype.
//!
//! Each library profile is trained on a 12 h run of the reference weather
//! with the archetype as driver. The driver never accepts a handover, so
//! the whole run is spent on manual data and the shipped profile starts
//! the user off all-manual.

use std::fs;
use std::path::{Path, PathBuf};

use super::{load_profile, save_profile, Profile, ProfileError, Provenance, UserType};
use crate::estimator::AutomationState;
use crate::normalize::NormalizationStats;
use crate::schema::{EnvSchema, SetpointSchema};
use crate::sim::driver::{AcceptancePolicy, DriverModel};
use crate::sim::run::{run_scenario, LoopOptions, RunOutput, StartModel};
use crate::sim::Scenario;

const TRAINING_HOURS: f64 = 12.0;

/// Hidden preference of each archetype: cabin temperature at 20 degC
/// ambient, seat and panel heating at 15 degC ambient.
pub fn archetype_driver(t: UserType) -> DriverModel {
    match t {
        UserType::ColdSensitive => DriverModel::archetype(26.0, 0.6, 0.55),
        UserType::Neutral => DriverModel::reference(),
        UserType::WarmSensitive => DriverModel::archetype(22.0, 0.1, 0.05),
    }
}

fn index(t: UserType) -> u64 {
    UserType::ALL.iter().position(|&u| u == t).expect("listed") as u64
}

pub fn training_scenario(t: UserType) -> Scenario {
    let mut s = Scenario::reference(TRAINING_HOURS * 3600.0).with_seed(100 + index(t));
    s.name = format!("library-{t}");
    s.driver = archetype_driver(t);
    s.driver.acceptance = AcceptancePolicy::Never;
    s
}

/// Held-out weather for judging a profile against an archetype.
pub fn eval_scenario(t: UserType) -> Scenario {
    let mut s = Scenario::reference(6.0 * 3600.0).with_seed(200 + index(t));
    s.name = format!("eval-{t}");
    s.driver = archetype_driver(t);
    s
}

impl Profile {
    /// Profile from the final model of a finished run. A run that never
    /// published a model yields its untrained initial network.
    pub fn from_run(
        profile_id: impl Into<String>,
        scenario: &Scenario,
        output: &RunOutput,
        provenance: Provenance,
    ) -> Result<Self, ProfileError> {
        let env_schema = EnvSchema::default();
        let setpoint_schema = SetpointSchema::default();
        let (network, normalization) = match output.estimator.current_model() {
            Some(m) => (m.network.clone(), m.norm.clone()),
            None => (
                output.estimator.working_network().clone(),
                NormalizationStats::identity(env_schema.len(), setpoint_schema.len()),
            ),
        };
        let p = Self {
            profile_id: profile_id.into(),
            created_s: 0.0,
            updated_s: scenario.duration_s,
            env_schema,
            setpoint_schema,
            network,
            normalization,
            acquisition: scenario.acquisition.clone(),
            automation: output.estimator.state().clone(),
            provenance,
        };
        p.validate()?;
        Ok(p)
    }

    /// Starting point for a loop that serves this profile's model.
    pub fn start_model(&self) -> StartModel {
        StartModel {
            network: self.network.clone(),
            norm: self.normalization.clone(),
            state: self.automation.clone(),
            publish: true,
        }
    }
}

/// Train the library profile for `t`. Deterministic.
pub fn library_profile(t: UserType) -> Result<Profile, ProfileError> {
    let scenario = training_scenario(t);
    let out = run_scenario(&scenario, LoopOptions::default()).map_err(|e| ProfileError::Generation(e.to_string()))?;
    let mut p = Profile::from_run(format!("library-{t}"), &scenario, &out, Provenance::PretrainedLibrary)?;
    p.automation = AutomationState::all_manual(p.setpoint_schema.len(), scenario.estimator.loss_threshold);
    Ok(p)
}

pub fn library_path(dir: &Path, t: UserType) -> PathBuf {
    dir.join(format!("{t}.json"))
}

/// Write all three library profiles into `dir`.
pub fn generate_library(dir: &Path) -> Result<Vec<PathBuf>, ProfileError> {
    fs::create_dir_all(dir).map_err(|source| ProfileError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    UserType::ALL
        .into_iter()
        .map(|t| {
            let path = library_path(dir, t);
            save_profile(&library_profile(t)?, &path)?;
            Ok(path)
        })
        .collect()
}

/// Library profile for `t`, as pretrained and all-manual.
pub fn select_pretrained(dir: &Path, t: UserType) -> Result<Profile, ProfileError> {
    let path = library_path(dir, t);
    if !path.is_file() {
        return Err(ProfileError::MissingLibraryEntry { user_type: t, path });
    }
    let mut p = load_profile(&path)?;
    p.provenance = Provenance::PretrainedLibrary;
    p.reset_automation();
    Ok(p)
}
