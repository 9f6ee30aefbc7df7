//! The closed loop: sense, propose, driver, acquisition, control, plant,
//! periodic training.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::control::control_step;
use super::driver::{driver_step, DriverAction, DriverState};
use super::scenario::{interpolate, Environment, Scenario};
use super::thermal::{thermal_step, ActuatorState, CabinState};
use super::SimError;
use crate::acquisition::{EnvSample, SampleBuffer};
use crate::estimator::{
    release_to_manual, AutomationMode, AutomationState, Candidate, Estimator, EstimatorError, TrainingJob,
    TrainingReport,
};
use crate::nnet::Network;
use crate::normalize::NormalizationStats;
use crate::schema::{
    EnvSchema, SetpointSchema, SetpointVector, AMBIENT_TEMP, CABIN_HUMIDITY, CABIN_TEMP, SOLAR_LOAD, VEHICLE_SPEED,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainingMode {
    /// Rounds run inline when due; fully deterministic.
    Synchronous,
    /// The host takes a [`TrainingJob`] when due, runs it wherever it likes
    /// and hands the result back with [`ClosedLoop::finish_training`].
    External,
    Disabled,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// Normal operation: everything is learned from the driver.
    Learn,
    /// Pure inference: all outputs automated, no driver actions, no training.
    Eval,
}

/// Starting model for a loop, typically from a stored profile.
#[derive(Debug, Clone)]
pub struct StartModel {
    pub network: Network,
    pub norm: NormalizationStats,
    pub state: AutomationState,
    /// Serve the model right away instead of only training from it.
    pub publish: bool,
}

#[derive(Debug, Clone)]
pub struct LoopOptions {
    pub mode: RunMode,
    pub training: TrainingMode,
    /// `false` leaves all setpoint changes to the host (a human at the panel).
    pub synthetic_driver: bool,
    pub start: Option<StartModel>,
}

impl Default for LoopOptions {
    fn default() -> Self {
        Self {
            mode: RunMode::Learn,
            training: TrainingMode::Synchronous,
            synthetic_driver: true,
            start: None,
        }
    }
}

/// Rejected user command.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum CommandError {
    #[error("setpoint index {index} out of range for {len} setpoints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("value {value} outside [{min}, {max}]")]
    OutOfBounds { value: f64, min: f64, max: f64 },
    #[error("setpoint {0} is automated; release it first")]
    Automated(usize),
    #[error("setpoint {0} has no pending proposal")]
    NoProposal(usize),
    #[error("setpoint {0} is not automated")]
    NotAutomated(usize),
}

/// One training round as seen by the loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u64,
    pub time_s: f64,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    pub provisional: Vec<bool>,
    pub trained: Vec<bool>,
    pub loss_threshold: Vec<f64>,
    pub samples_used: usize,
    pub validation_samples: usize,
    pub published_version: Option<u64>,
    pub proposals: Vec<usize>,
    pub degraded: Vec<usize>,
    pub auto_accepted: Vec<usize>,
    pub modes_after: Vec<AutomationMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalMetrics {
    pub interval: u64,
    pub t_start_s: f64,
    pub t_end_s: f64,
    /// Setpoint adjustments by the driver.
    pub interventions: u32,
    /// Automated setpoints taken back by the driver.
    pub releases: u32,
    pub proposals: u32,
    /// Automated setpoints at the end of the interval.
    pub automated: usize,
    /// Committed samples in the buffer at the end of the interval.
    pub committed_samples: usize,
    pub model_version: u64,
    /// Mean over ticks and setpoints of `|active - desired| / span`.
    pub comfort_error: f64,
    /// Mean `|active - desired|` per setpoint, in setpoint units.
    pub comfort_error_per_output: Vec<f64>,
    /// Validation loss of the last round in the interval.
    pub validation_loss: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsLog {
    pub setpoint_names: Vec<String>,
    pub rows: Vec<IntervalMetrics>,
}

impl MetricsLog {
    pub fn new(setpoints: &SetpointSchema) -> Self {
        Self {
            setpoint_names: setpoints.setpoints.iter().map(|c| c.name.clone()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = [
            "interval",
            "t_start_s",
            "t_end_s",
            "interventions",
            "releases",
            "proposals",
            "automated",
            "committed_samples",
            "model_version",
            "comfort_error",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        h.extend(self.setpoint_names.iter().map(|n| format!("comfort_error_{n}")));
        h.extend(self.setpoint_names.iter().map(|n| format!("val_loss_{n}")));
        h
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header()).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![
                r.interval.to_string(),
                r.t_start_s.to_string(),
                r.t_end_s.to_string(),
                r.interventions.to_string(),
                r.releases.to_string(),
                r.proposals.to_string(),
                r.automated.to_string(),
                r.committed_samples.to_string(),
                r.model_version.to_string(),
                r.comfort_error.to_string(),
            ];
            rec.extend(r.comfort_error_per_output.iter().map(f64::to_string));
            match &r.validation_loss {
                Some(v) => rec.extend(v.iter().map(f64::to_string)),
                None => rec.extend(self.setpoint_names.iter().map(|_| String::new())),
            }
            w.write_record(rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

/// Training rounds as CSV: one row per round.
pub fn rounds_csv(names: &[String], rounds: &[RoundRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "round".to_string(),
        "time_s".into(),
        "samples_used".into(),
        "validation_samples".into(),
        "published_version".into(),
    ];
    for prefix in ["train_loss", "val_loss", "provisional", "mode"] {
        header.extend(names.iter().map(|n| format!("{prefix}_{n}")));
    }
    header.extend(["proposals".into(), "degraded".into()]);
    w.write_record(&header).expect("in-memory write");
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(";");
    for r in rounds {
        let mut rec = vec![
            r.round.to_string(),
            r.time_s.to_string(),
            r.samples_used.to_string(),
            r.validation_samples.to_string(),
            r.published_version.map(|v| v.to_string()).unwrap_or_default(),
        ];
        rec.extend(r.train_loss.iter().map(f64::to_string));
        rec.extend(r.validation_loss.iter().map(f64::to_string));
        rec.extend(r.provisional.iter().map(bool::to_string));
        rec.extend(r.modes_after.iter().map(|m| mode_name(*m).to_string()));
        rec.push(list(&r.proposals));
        rec.push(list(&r.degraded));
        w.write_record(rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn mode_name(m: AutomationMode) -> &'static str {
    match m {
        AutomationMode::Manual => "manual",
        AutomationMode::Proposed => "proposed",
        AutomationMode::Automated => "automated",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub duration_s: f64,
    pub steps: u64,
    /// Driver adjustments per simulated hour, starting with the first.
    pub interventions_per_hour: Vec<u32>,
    pub interventions_total: u64,
    pub releases_total: u64,
    pub proposals_total: u64,
    pub final_automated: usize,
    pub final_modes: Vec<AutomationMode>,
    /// Validation loss of the last round that trained anything.
    pub final_validation_loss: Option<Vec<f64>>,
    pub model_version: u64,
    pub rounds: u64,
    pub committed_samples: usize,
    pub invalidated_samples: usize,
    pub evicted_samples: usize,
    pub mean_comfort_error: f64,
}

/// Inference-only quality figures against the scenario's driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub steps: u64,
    /// Mean over ticks and setpoints of `|active - desired| / span`.
    pub comfort_error: f64,
    pub comfort_error_per_output: Vec<f64>,
    /// Mean squared error against the desired setpoints in the model's
    /// normalized output space.
    pub loss_per_output: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickEvents {
    pub step: u64,
    pub time_s: f64,
    pub actions: Vec<DriverAction>,
    pub round: Option<RoundRecord>,
    /// A round is due and the host should fetch a job (external training).
    pub training_due: bool,
    pub interval: Option<IntervalMetrics>,
}

#[derive(Debug, Clone, Default)]
struct Accumulator {
    ticks: u64,
    interventions: u32,
    releases: u32,
    proposals: u32,
    comfort: f64,
    comfort_per_output: Vec<f64>,
    sq_norm_error: Vec<f64>,
    last_loss: Option<Vec<f64>>,
}

impl Accumulator {
    fn new(n: usize) -> Self {
        Self {
            comfort_per_output: vec![0.0; n],
            sq_norm_error: vec![0.0; n],
            ..Self::default()
        }
    }
}

/// A running closed loop. `run_scenario` drives it to the end; the service
/// ticks it in (scaled) real time.
#[derive(Debug)]
pub struct ClosedLoop {
    scenario: Scenario,
    options: LoopOptions,
    env_schema: EnvSchema,
    sp_schema: SetpointSchema,
    environment: Environment,
    cabin: CabinState,
    actuators: ActuatorState,
    manual: SetpointVector,
    active: SetpointVector,
    last_env: EnvSample,
    driver_state: DriverState,
    buffer: SampleBuffer,
    estimator: Estimator,
    step: u64,
    time: f64,
    next_training: f64,
    job_in_flight: bool,
    interval: Accumulator,
    interval_index: u64,
    total: Accumulator,
    hourly: Vec<u32>,
    totals: (u64, u64, u64),
    metrics: MetricsLog,
    rounds: Vec<RoundRecord>,
    last_trained_loss: Option<Vec<f64>>,
}

impl ClosedLoop {
    pub fn new(scenario: Scenario, options: LoopOptions) -> Result<Self, SimError> {
        let env_schema = EnvSchema::default();
        let sp_schema = SetpointSchema::default();
        scenario.validate(&sp_schema)?;
        let mut config = scenario.estimator.clone();
        config.seed = scenario.seeds.training;
        let estimator = match &options.start {
            Some(s) => {
                if s.network.input_dim() != env_schema.len() || s.network.output_dim() != sp_schema.len() {
                    return Err(SimError::InvalidScenario(
                        "start model does not match the environment/setpoint schemas".into(),
                    ));
                }
                Estimator::from_parts(config, s.network.clone(), s.norm.clone(), s.state.clone(), s.publish)
            }
            None => Estimator::new(config, env_schema.len(), sp_schema.len())?,
        };
        let buffer = SampleBuffer::for_schema(
            scenario.acquisition.clone(),
            &env_schema,
            &sp_schema,
            scenario.seeds.acquisition,
        )?;
        Self::with_parts(scenario, estimator, buffer, options)
    }

    /// Build a loop around an existing estimator and buffer.
    pub fn with_parts(
        scenario: Scenario,
        mut estimator: Estimator,
        buffer: SampleBuffer,
        mut options: LoopOptions,
    ) -> Result<Self, SimError> {
        let env_schema = EnvSchema::default();
        let sp_schema = SetpointSchema::default();
        scenario.validate(&sp_schema)?;
        if estimator.state().len() != sp_schema.len() {
            return Err(SimError::InvalidScenario("automation state / setpoint schema mismatch".into()));
        }
        if options.mode == RunMode::Eval {
            if estimator.current_model().is_none() {
                return Err(SimError::InvalidScenario("evaluation needs a published model".into()));
            }
            for s in &mut estimator.state_mut().setpoints {
                s.mode = AutomationMode::Automated;
            }
            options.training = TrainingMode::Disabled;
            options.synthetic_driver = false;
        }
        let ambient0 = interpolate(&scenario.ambient, 0.0);
        let mut cabin = CabinState::soaked(
            scenario.initial.cabin_temp.unwrap_or(ambient0),
            scenario.initial.cabin_humidity,
        );
        cabin.time = 0.0;
        let initial_sp = scenario.initial.setpoints.clone().unwrap_or_else(|| vec![22.0, 0.0, 0.0]);
        let manual = SetpointVector::manual(&sp_schema, &initial_sp);
        let environment = Environment::new(&scenario);
        let n = sp_schema.len();
        let mut me = Self {
            driver_state: DriverState::new(n, scenario.seeds.driver),
            next_training: scenario.training_interval_s,
            metrics: MetricsLog::new(&sp_schema),
            hourly: Vec::new(),
            last_env: EnvSample::with_schema(0.0, vec![0.0; env_schema.len()], &env_schema),
            active: manual.clone(),
            manual,
            environment,
            cabin,
            actuators: ActuatorState::default(),
            buffer,
            estimator,
            step: 0,
            time: 0.0,
            job_in_flight: false,
            interval: Accumulator::new(n),
            interval_index: 0,
            total: Accumulator::new(n),
            totals: (0, 0, 0),
            rounds: Vec::new(),
            last_trained_loss: None,
            scenario,
            options,
            env_schema,
            sp_schema,
        };
        me.last_env = me.sense(me.time, me.environment.current(0.0));
        me.active = me.propose(&me.last_env.clone())?;
        Ok(me)
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn options(&self) -> &LoopOptions {
        &self.options
    }

    pub fn env_schema(&self) -> &EnvSchema {
        &self.env_schema
    }

    pub fn setpoint_schema(&self) -> &SetpointSchema {
        &self.sp_schema
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> u64 {
        self.step
    }

    pub fn finished(&self) -> bool {
        self.step >= self.scenario.steps()
    }

    pub fn cabin(&self) -> &CabinState {
        &self.cabin
    }

    pub fn actuators(&self) -> &ActuatorState {
        &self.actuators
    }

    /// Setpoints as applied on the last tick.
    pub fn active_setpoints(&self) -> &SetpointVector {
        &self.active
    }

    pub fn manual_setpoints(&self) -> &SetpointVector {
        &self.manual
    }

    pub fn last_env(&self) -> &EnvSample {
        &self.last_env
    }

    pub fn estimator(&self) -> &Estimator {
        &self.estimator
    }

    pub fn buffer(&self) -> &SampleBuffer {
        &self.buffer
    }

    pub fn metrics(&self) -> &MetricsLog {
        &self.metrics
    }

    pub fn rounds(&self) -> &[RoundRecord] {
        &self.rounds
    }

    pub fn pending_proposals(&self) -> Vec<usize> {
        self.estimator.state().proposed()
    }

    pub fn model_version(&self) -> u64 {
        self.estimator.current_model().map_or(0, |m| m.version)
    }

    /// Setpoints the scenario's driver would want right now.
    pub fn desired_setpoints(&self) -> Result<Vec<f64>, SimError> {
        self.scenario
            .driver
            .desired(&self.last_env.values, &self.env_schema, &self.sp_schema)
    }

    fn sense(&self, t: f64, w: super::scenario::Weather) -> EnvSample {
        let mut values = vec![0.0; self.env_schema.len()];
        let readings = [
            (CABIN_TEMP, self.cabin.cabin_temp),
            (AMBIENT_TEMP, w.ambient),
            (CABIN_HUMIDITY, self.cabin.cabin_humidity),
            (SOLAR_LOAD, w.solar),
            (VEHICLE_SPEED, w.speed),
        ];
        for (name, v) in readings {
            if let Some(i) = self.env_schema.index_of(name) {
                values[i] = v;
            }
        }
        EnvSample::with_schema(t, values, &self.env_schema)
    }

    fn propose(&self, env: &EnvSample) -> Result<SetpointVector, SimError> {
        Ok(self.estimator.propose(env, &self.manual)?)
    }

    fn check_index(&self, index: usize) -> Result<(), CommandError> {
        if index >= self.sp_schema.len() {
            return Err(CommandError::IndexOutOfRange {
                index,
                len: self.sp_schema.len(),
            });
        }
        Ok(())
    }

    /// A manual setpoint change. Takes effect on the next tick and counts as
    /// an intervention.
    pub fn user_adjust(&mut self, index: usize, value: f64) -> Result<(), CommandError> {
        self.check_index(index)?;
        let c = &self.sp_schema.setpoints[index];
        if !value.is_finite() || !c.contains(value) {
            return Err(CommandError::OutOfBounds {
                value,
                min: c.min,
                max: c.max,
            });
        }
        if self.estimator.state().mode(index) == AutomationMode::Automated {
            return Err(CommandError::Automated(index));
        }
        self.manual.values[index] = value;
        self.active = self.propose(&self.last_env.clone()).unwrap_or_else(|_| self.active.clone());
        self.buffer
            .notify_user_change(self.time, index)
            .expect("user change time follows the loop clock");
        self.count_intervention();
        Ok(())
    }

    pub fn user_handover(&mut self, index: usize, accept: bool) -> Result<(), CommandError> {
        self.check_index(index)?;
        let state = self.estimator.state_mut();
        let r = if accept {
            state.accept_handover(index)
        } else {
            state.reject_handover(index)
        };
        r.map_err(|_| CommandError::NoProposal(index))?;
        self.active = self.propose(&self.last_env.clone()).unwrap_or_else(|_| self.active.clone());
        Ok(())
    }

    /// Take an automated setpoint back. The manual value starts from what
    /// the automation was applying, so the cabin does not jump.
    pub fn user_release(&mut self, index: usize) -> Result<(), CommandError> {
        self.check_index(index)?;
        if self.estimator.state().mode(index) != AutomationMode::Automated {
            return Err(CommandError::NotAutomated(index));
        }
        self.manual.values[index] = self.active.values[index];
        let t = self.time;
        release_to_manual(self.estimator.state_mut(), &mut self.buffer, index, t)
            .expect("release of an automated setpoint");
        self.active = self.propose(&self.last_env.clone()).unwrap_or_else(|_| self.active.clone());
        self.interval.releases += 1;
        self.totals.1 += 1;
        Ok(())
    }

    fn count_intervention(&mut self) {
        self.interval.interventions += 1;
        self.totals.0 += 1;
        let hour = (self.time / 3600.0).floor() as usize;
        if self.hourly.len() <= hour {
            self.hourly.resize(hour + 1, 0);
        }
        self.hourly[hour] += 1;
    }

    fn apply_driver(&mut self, action: DriverAction) -> Result<(), SimError> {
        let r = match action {
            DriverAction::Adjust { index, value } => self.user_adjust(index, value),
            DriverAction::AcceptHandover(i) => self.user_handover(i, true),
            DriverAction::RejectHandover(i) => self.user_handover(i, false),
            DriverAction::Release(i) => self.user_release(i),
        };
        r.map_err(|e| SimError::InvalidScenario(format!("driver action {action:?} refused: {e}")))
    }

    /// Advance the loop by one timestep.
    pub fn tick(&mut self) -> Result<TickEvents, SimError> {
        let step = self.step;
        self.tick_inner().map_err(|e| e.at_step(step))
    }

    fn tick_inner(&mut self) -> Result<TickEvents, SimError> {
        let t = self.time;
        let dt = self.scenario.timestep_s;
        let weather = self.environment.current(t);
        let env = self.sense(t, weather);
        self.last_env = env.clone();
        let mut events = TickEvents {
            step: self.step,
            time_s: t,
            ..TickEvents::default()
        };

        self.active = self.propose(&env)?;
        if self.options.synthetic_driver {
            let proposals = self.estimator.state().proposed();
            let actions = driver_step(
                &self.scenario.driver,
                &mut self.driver_state,
                &env,
                &self.active,
                &proposals,
                t,
                &self.env_schema,
                &self.sp_schema,
            )?;
            for &a in &actions {
                self.apply_driver(a)?;
            }
            events.actions = actions;
        }
        let active = self.active.clone();
        let desired = self.scenario.driver.desired(&env.values, &self.env_schema, &self.sp_schema)?;

        if self.options.training != TrainingMode::Disabled {
            self.buffer.offer_sample(&env, &active.values, &active.manual_mask())?;
            self.buffer.commit_ready(t);
            self.buffer.evict_if_full();
        }

        self.actuators = control_step(&active, &self.cabin, &self.actuators, dt, &self.scenario.control);
        self.cabin = thermal_step(
            &self.cabin,
            &self.actuators,
            weather.ambient,
            weather.solar,
            dt,
            &self.scenario.thermal,
        )?;
        self.environment.advance(dt);
        self.step += 1;
        self.time = self.step as f64 * dt;
        self.accumulate(&active, &desired);

        if self.options.training != TrainingMode::Disabled && self.time >= self.next_training - 1e-9 {
            self.next_training += self.scenario.training_interval_s;
            match self.options.training {
                TrainingMode::Synchronous => {
                    let result = self.estimator.job(self.buffer.snapshot()).run()?;
                    events.round = Some(self.finish_training(result)?);
                }
                TrainingMode::External => events.training_due = !self.job_in_flight,
                TrainingMode::Disabled => {}
            }
        }

        let interval_end = (self.interval_index + 1) as f64 * self.scenario.report_interval_s;
        if self.time >= interval_end - 1e-9 || self.finished() {
            events.interval = Some(self.flush_interval());
        }
        Ok(events)
    }

    /// Job for the next training round, for external training. `None` while
    /// a previous job is still out.
    pub fn take_training_job(&mut self) -> Option<TrainingJob> {
        if self.job_in_flight || self.options.training == TrainingMode::Disabled {
            return None;
        }
        self.job_in_flight = true;
        Some(self.estimator.job(self.buffer.snapshot()))
    }

    /// Publish a finished round and apply its handover outcome.
    pub fn finish_training(
        &mut self,
        result: (Option<Candidate>, TrainingReport),
    ) -> Result<RoundRecord, EstimatorError> {
        self.job_in_flight = false;
        let r = self.estimator.finish_round(result)?;
        let state = self.estimator.state();
        let record = RoundRecord {
            round: r.report.round_index,
            time_s: self.time,
            train_loss: r.report.train_loss.clone(),
            validation_loss: r.report.validation_loss.clone(),
            provisional: r.report.provisional.clone(),
            trained: r.report.trained.clone(),
            loss_threshold: state.setpoints.iter().map(|s| s.loss_threshold).collect(),
            samples_used: r.report.samples_used,
            validation_samples: r.report.validation_samples,
            published_version: r.report.published_version,
            proposals: r.outcome.proposals.clone(),
            degraded: r.outcome.degraded.clone(),
            auto_accepted: r.auto_accepted.clone(),
            modes_after: state.modes(),
        };
        if r.report.did_train() {
            self.interval.last_loss = Some(r.report.validation_loss.clone());
            self.last_trained_loss = Some(r.report.validation_loss);
        }
        self.interval.proposals += r.outcome.proposals.len() as u32;
        self.totals.2 += r.outcome.proposals.len() as u64;
        self.rounds.push(record.clone());
        if !r.auto_accepted.is_empty() {
            self.active = self.propose(&self.last_env.clone()).unwrap_or_else(|_| self.active.clone());
        }
        Ok(record)
    }

    fn accumulate(&mut self, active: &SetpointVector, desired: &[f64]) {
        let norm = self.estimator.current_model().map(|m| m.norm.clone());
        let n = desired.len();
        for acc in [&mut self.interval, &mut self.total] {
            acc.ticks += 1;
            let mut comfort = 0.0;
            for i in 0..n {
                let err = (active.values[i] - desired[i]).abs();
                acc.comfort_per_output[i] += err;
                comfort += err / self.sp_schema.setpoints[i].span();
                let std = norm.as_ref().map_or(1.0, |m| m.setpoint_std[i]);
                acc.sq_norm_error[i] += (err / std).powi(2);
            }
            acc.comfort += comfort / n as f64;
        }
    }

    fn flush_interval(&mut self) -> IntervalMetrics {
        let acc = std::mem::replace(&mut self.interval, Accumulator::new(self.sp_schema.len()));
        let ticks = acc.ticks.max(1) as f64;
        let t_start = self.interval_index as f64 * self.scenario.report_interval_s;
        let row = IntervalMetrics {
            interval: self.interval_index,
            t_start_s: t_start,
            t_end_s: self.time,
            interventions: acc.interventions,
            releases: acc.releases,
            proposals: acc.proposals,
            automated: self.estimator.state().automated_count(),
            committed_samples: self.buffer.committed().len(),
            model_version: self.model_version(),
            comfort_error: acc.comfort / ticks,
            comfort_error_per_output: acc.comfort_per_output.iter().map(|c| c / ticks).collect(),
            validation_loss: acc.last_loss,
        };
        self.interval_index += 1;
        self.metrics.rows.push(row.clone());
        row
    }

    pub fn summary(&self) -> RunSummary {
        let hours = (self.scenario.duration_s / 3600.0).ceil() as usize;
        let mut per_hour = self.hourly.clone();
        per_hour.resize(hours.max(per_hour.len()), 0);
        RunSummary {
            scenario: self.scenario.name.clone(),
            duration_s: self.scenario.duration_s,
            steps: self.step,
            interventions_per_hour: per_hour,
            interventions_total: self.totals.0,
            releases_total: self.totals.1,
            proposals_total: self.totals.2,
            final_automated: self.estimator.state().automated_count(),
            final_modes: self.estimator.state().modes(),
            final_validation_loss: self.last_trained_loss.clone(),
            model_version: self.model_version(),
            rounds: self.estimator.rounds(),
            committed_samples: self.buffer.committed().len(),
            invalidated_samples: self.buffer.invalidated_count(),
            evicted_samples: self.buffer.evicted_count(),
            mean_comfort_error: self.total.comfort / self.total.ticks.max(1) as f64,
        }
    }

    pub fn eval_report(&self) -> EvalReport {
        let ticks = self.total.ticks.max(1) as f64;
        EvalReport {
            steps: self.step,
            comfort_error: self.total.comfort / ticks,
            comfort_error_per_output: self.total.comfort_per_output.iter().map(|c| c / ticks).collect(),
            loss_per_output: self.total.sq_norm_error.iter().map(|c| c / ticks).collect(),
        }
    }

    /// Run to the end of the scenario.
    pub fn run_to_end(mut self) -> Result<RunOutput, SimError> {
        while !self.finished() {
            self.tick()?;
        }
        Ok(self.into_output())
    }

    pub fn into_output(self) -> RunOutput {
        let summary = self.summary();
        let eval = (self.options.mode == RunMode::Eval).then(|| self.eval_report());
        RunOutput {
            metrics: self.metrics,
            rounds: self.rounds,
            summary,
            eval,
            estimator: self.estimator,
            buffer: self.buffer,
        }
    }
}

#[derive(Debug)]
pub struct RunOutput {
    pub metrics: MetricsLog,
    pub rounds: Vec<RoundRecord>,
    pub summary: RunSummary,
    pub eval: Option<EvalReport>,
    pub estimator: Estimator,
    pub buffer: SampleBuffer,
}

impl RunOutput {
    pub fn rounds_csv(&self) -> String {
        rounds_csv(&self.metrics.setpoint_names, &self.rounds)
    }

    /// Short human-readable digest.
    pub fn describe(&self) -> String {
        let s = &self.summary;
        let mut out = String::new();
        let _ = writeln!(out, "steps {} rounds {} model v{}", s.steps, s.rounds, s.model_version);
        let _ = writeln!(out, "interventions per hour {:?}", s.interventions_per_hour);
        let _ = writeln!(out, "final modes {:?}", s.final_modes);
        let _ = writeln!(out, "final validation loss {:?}", s.final_validation_loss);
        out
    }
}

/// Run `scenario` to completion with a fresh estimator and buffer.
pub fn run_scenario(scenario: &Scenario, options: LoopOptions) -> Result<RunOutput, SimError> {
    ClosedLoop::new(scenario.clone(), options)?.run_to_end()
}
