//! The session task: sole owner of the running loop.
//!
//! Handlers never touch the loop. They send a [`Request`] down an ordered
//! queue and wait for the reply; requests are applied one at a time between
//! ticks, in the order they were queued, and every reply carries a snapshot
//! taken right after its request was applied.

use std::time::{Duration, Instant};

use axum::http::StatusCode;
use serde::{Deserialize, Serialize};
use tokio::sync::{mpsc, oneshot};
use tokio::time::MissedTickBehavior;

use autoclima_core::estimator::{Candidate, EstimatorError, TrainingReport};
use autoclima_core::schema::AutomationMode;
use autoclima_core::sim::run::{ClosedLoop, RoundRecord};
use autoclima_core::sim::{ActuatorState, CabinState};

use crate::error::ApiError;

/// Wall-clock period of the tick loop.
const WAKE_PERIOD: Duration = Duration::from_millis(10);
/// Upper bound on simulation steps per wake-up so requests stay responsive
/// at very large time scales.
const MAX_STEPS_PER_WAKE: u64 = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriverMode {
    /// A person at the panel is the driver.
    Human,
    /// The scenario's synthetic driver acts; setpoint commands are refused.
    Synthetic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Paused,
    Finished,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnvReading {
    pub name: String,
    pub unit: String,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SetpointDoc {
    pub index: usize,
    pub name: String,
    pub unit: String,
    pub min: f64,
    pub max: f64,
    /// Value currently applied to the actuators.
    pub value: f64,
    /// Last value the user chose.
    pub manual_value: f64,
    pub mode: AutomationMode,
    pub consecutive_passes: u32,
    pub loss_threshold: f64,
}

/// Snapshot of a session; every field comes from the same point between
/// two ticks.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateDocument {
    /// Number of state-changing requests received so far, refused ones
    /// included; reads do not count.
    pub commands_applied: u64,
    pub tick: u64,
    pub time_s: f64,
    pub status: RunStatus,
    pub mode: DriverMode,
    pub time_scale: f64,
    pub scenario: String,
    pub duration_s: f64,
    pub cabin: CabinState,
    pub actuators: ActuatorState,
    pub environment: Vec<EnvReading>,
    pub setpoints: Vec<SetpointDoc>,
    pub pending_proposals: Vec<usize>,
    pub model_version: u64,
    pub training_in_flight: bool,
    pub last_round: Option<RoundRecord>,
    pub interventions_total: u64,
    pub error: Option<String>,
}

/// Reply to a state-changing request.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CommandAck {
    /// Position of this request in the session's queue, starting at 1.
    pub seq: u64,
    pub state: StateDocument,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Request {
    State,
    Metrics,
    Setpoint { index: usize, value: f64 },
    Handover { index: usize, accept: bool },
    Release { index: usize },
    Pause,
    Resume,
    Stop,
}

#[derive(Debug)]
pub enum Answer {
    State(Box<StateDocument>),
    Ack(Box<CommandAck>),
    Csv(String),
}

pub type Reply = Result<Answer, ApiError>;

struct Envelope {
    request: Request,
    reply: oneshot::Sender<Reply>,
}

/// Handle held by the HTTP side.
#[derive(Debug, Clone)]
pub struct SessionHandle {
    tx: mpsc::UnboundedSender<Envelope>,
}

impl SessionHandle {
    pub fn is_alive(&self) -> bool {
        !self.tx.is_closed()
    }

    pub async fn call(&self, request: Request) -> Reply {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Envelope { request, reply })
            .map_err(|_| ApiError::no_session())?;
        rx.await.map_err(|_| ApiError::no_session())?
    }
}

type TrainingResult = Result<(Option<Candidate>, TrainingReport), EstimatorError>;

struct Session {
    lp: ClosedLoop,
    mode: DriverMode,
    time_scale: f64,
    status: RunStatus,
    /// Wall instant and step index at which the current running stretch began.
    anchor: (Instant, u64),
    applied: u64,
    training_in_flight: bool,
    error: Option<String>,
    train_tx: mpsc::UnboundedSender<TrainingResult>,
}

/// Start the session task for a loop. The loop must use external training.
pub fn spawn(lp: ClosedLoop, mode: DriverMode, time_scale: f64) -> SessionHandle {
    let (tx, rx) = mpsc::unbounded_channel();
    let (train_tx, train_rx) = mpsc::unbounded_channel();
    let status = if lp.finished() { RunStatus::Finished } else { RunStatus::Running };
    let session = Session {
        anchor: (Instant::now(), lp.step_index()),
        lp,
        mode,
        time_scale,
        status,
        applied: 0,
        training_in_flight: false,
        error: None,
        train_tx,
    };
    tokio::spawn(session.run(rx, train_rx));
    SessionHandle { tx }
}

impl Session {
    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Envelope>, mut train_rx: mpsc::UnboundedReceiver<TrainingResult>) {
        let mut wake = tokio::time::interval(WAKE_PERIOD);
        wake.set_missed_tick_behavior(MissedTickBehavior::Skip);
        loop {
            tokio::select! {
                biased;
                envelope = rx.recv() => {
                    let Some(Envelope { request, reply }) = envelope else { return };
                    let answer = self.apply(request);
                    let _ = reply.send(answer);
                    if request == Request::Stop {
                        return;
                    }
                }
                Some(result) = train_rx.recv() => self.finish_training(result),
                _ = wake.tick() => self.advance(),
            }
        }
    }

    fn fail(&mut self, message: String) {
        self.status = RunStatus::Failed;
        self.error = Some(message);
    }

    fn advance(&mut self) {
        if self.status != RunStatus::Running {
            return;
        }
        let dt = self.lp.scenario().timestep_s;
        let elapsed = self.anchor.0.elapsed().as_secs_f64();
        let target = self.anchor.1 + (elapsed * self.time_scale / dt).floor() as u64;
        let mut budget = MAX_STEPS_PER_WAKE;
        while self.lp.step_index() < target && budget > 0 {
            if self.lp.finished() {
                self.status = RunStatus::Finished;
                return;
            }
            budget -= 1;
            match self.lp.tick() {
                Ok(events) if events.training_due => self.start_training(),
                Ok(_) => {}
                Err(e) => return self.fail(e.to_string()),
            }
        }
        if self.lp.finished() {
            self.status = RunStatus::Finished;
        }
    }

    fn start_training(&mut self) {
        let Some(job) = self.lp.take_training_job() else { return };
        self.training_in_flight = true;
        let tx = self.train_tx.clone();
        tokio::task::spawn_blocking(move || {
            let _ = tx.send(job.run());
        });
    }

    fn finish_training(&mut self, result: TrainingResult) {
        self.training_in_flight = false;
        let r = result.and_then(|r| self.lp.finish_training(r));
        if let Err(e) = r {
            self.fail(format!("training round failed: {e}"));
        }
    }

    fn apply(&mut self, request: Request) -> Reply {
        if matches!(request, Request::State | Request::Metrics | Request::Stop) {
            return Ok(match request {
                Request::Metrics => Answer::Csv(self.lp.metrics().to_csv()),
                _ => Answer::State(Box::new(self.snapshot())),
            });
        }
        self.applied += 1;
        let seq = self.applied;
        let ack = |s: &Self| Ok(Answer::Ack(Box::new(CommandAck { seq, state: s.snapshot() })));
        match request {
            Request::State | Request::Metrics | Request::Stop => unreachable!("handled above"),
            Request::Pause => {
                match self.status {
                    RunStatus::Running => self.status = RunStatus::Paused,
                    RunStatus::Paused => {}
                    _ => return Err(self.ended()),
                }
                ack(self)
            }
            Request::Resume => {
                match self.status {
                    RunStatus::Paused => {
                        self.status = RunStatus::Running;
                        self.anchor = (Instant::now(), self.lp.step_index());
                    }
                    RunStatus::Running => {}
                    _ => return Err(self.ended()),
                }
                ack(self)
            }
            Request::Setpoint { index, value } => {
                self.check_human()?;
                self.lp.user_adjust(index, value)?;
                ack(self)
            }
            Request::Handover { index, accept } => {
                self.check_human()?;
                self.lp.user_handover(index, accept)?;
                ack(self)
            }
            Request::Release { index } => {
                self.check_human()?;
                self.lp.user_release(index)?;
                ack(self)
            }
        }
    }

    fn ended(&self) -> ApiError {
        ApiError::new(StatusCode::CONFLICT, "session_ended", format!("session is {:?}", self.status).to_lowercase())
    }

    fn check_human(&self) -> Result<(), ApiError> {
        if self.mode != DriverMode::Human {
            return Err(ApiError::new(
                StatusCode::CONFLICT,
                "synthetic_session",
                "the synthetic driver owns the setpoints in this session",
            ));
        }
        if matches!(self.status, RunStatus::Finished | RunStatus::Failed) {
            return Err(self.ended());
        }
        Ok(())
    }

    fn snapshot(&self) -> StateDocument {
        let lp = &self.lp;
        let env = lp.last_env();
        let automation = lp.estimator().state();
        let active = lp.active_setpoints();
        let manual = lp.manual_setpoints();
        StateDocument {
            commands_applied: self.applied,
            tick: lp.step_index(),
            time_s: lp.time(),
            status: self.status,
            mode: self.mode,
            time_scale: self.time_scale,
            scenario: lp.scenario().name.clone(),
            duration_s: lp.scenario().duration_s,
            cabin: lp.cabin().clone(),
            actuators: lp.actuators().clone(),
            environment: lp
                .env_schema()
                .channels
                .iter()
                .zip(&env.values)
                .map(|(c, &value)| EnvReading {
                    name: c.name.clone(),
                    unit: c.unit.clone(),
                    value,
                })
                .collect(),
            setpoints: lp
                .setpoint_schema()
                .setpoints
                .iter()
                .enumerate()
                .map(|(i, c)| SetpointDoc {
                    index: i,
                    name: c.name.clone(),
                    unit: c.unit.clone(),
                    min: c.min,
                    max: c.max,
                    value: active.values[i],
                    manual_value: manual.values[i],
                    mode: automation.setpoints[i].mode,
                    consecutive_passes: automation.setpoints[i].consecutive_passes,
                    loss_threshold: automation.setpoints[i].loss_threshold,
                })
                .collect(),
            pending_proposals: lp.pending_proposals(),
            model_version: lp.model_version(),
            training_in_flight: self.training_in_flight,
            last_round: lp.rounds().last().cloned(),
            interventions_total: lp.summary().interventions_total,
            error: self.error.clone(),
        }
    }
}
