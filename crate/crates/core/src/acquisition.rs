//! Training-data acquisition from the live reading/setpoint stream.
//!
//! Samples are offered continuously; a sample is accepted when the rate gate
//! passes and the environment has moved enough (relative change of any
//! channel, or normalized nearest-neighbour distance in the joint
//! environment/setpoint space). Accepted samples stay pending until half the
//! sampling dead time has elapsed; any user change closer than
//! `dead_time_s / 2` to a sample invalidates it.

use std::collections::VecDeque;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{EnvSchema, SetpointSchema};

#[derive(Debug, Error, PartialEq)]
pub enum AcquisitionError {
    #[error("timestamp {found} precedes previous {previous}")]
    TimestampRegression { previous: f64, found: f64 },
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("setpoint index {index} out of range for {len} setpoints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("invalid acquisition config: {0}")]
    InvalidConfig(String),
    #[error("csv export failed: {0}")]
    Csv(String),
}

/// One timestamped vector of environment readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSample {
    pub timestamp: f64,
    pub values: Vec<f64>,
    pub schema_id: String,
}

impl EnvSample {
    pub fn new(timestamp: f64, values: Vec<f64>) -> Self {
        Self {
            timestamp,
            values,
            schema_id: String::new(),
        }
    }

    pub fn with_schema(timestamp: f64, values: Vec<f64>, schema: &EnvSchema) -> Self {
        Self {
            timestamp,
            values,
            schema_id: schema.id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleState {
    Pending,
    Committed,
    Invalidated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Validation,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSample {
    /// Sequence number assigned at acceptance, unique within a buffer.
    pub id: u64,
    pub env: EnvSample,
    pub setpoints: Vec<f64>,
    /// `true` where the setpoint was user controlled when sampled.
    pub manual_mask: Vec<bool>,
    pub state: SampleState,
    /// Meaningful once committed.
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub dead_time_s: f64,
    pub min_interval_s: f64,
    /// Relative-change gate; `None` disables it.
    pub change_fraction: Option<f64>,
    /// Nearest-neighbour distance gate in normalized space; `None` disables it.
    pub min_distance: Option<f64>,
    pub validation_fraction: f64,
    pub capacity: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        Self {
            dead_time_s: 120.0,
            min_interval_s: 10.0,
            change_fraction: Some(0.02),
            min_distance: Some(0.05),
            validation_fraction: 0.2,
            capacity: 10_000,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), AcquisitionError> {
        let bad = |m: &str| Err(AcquisitionError::InvalidConfig(m.to_string()));
        if !(self.dead_time_s > 0.0 && self.dead_time_s.is_finite()) {
            return bad("dead_time_s must be positive");
        }
        if !(self.min_interval_s > 0.0 && self.min_interval_s.is_finite()) {
            return bad("min_interval_s must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return bad("validation_fraction must lie in (0, 1)");
        }
        if let Some(f) = self.change_fraction {
            if !(f >= 0.0 && f.is_finite()) {
                return bad("change_fraction must be non-negative");
            }
        }
        if let Some(d) = self.min_distance {
            if !(d >= 0.0 && d.is_finite()) {
                return bad("min_distance must be non-negative");
            }
        }
        if self.capacity == 0 {
            return bad("capacity must be at least 1");
        }
        Ok(())
    }

    pub fn half_dead_time(&self) -> f64 {
        self.dead_time_s / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NoManualSetpoint,
    TooSoon,
    TooSimilar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfferDecision {
    AcceptedPending { id: u64 },
    Rejected(RejectReason),
}

impl OfferDecision {
    pub fn is_accepted(&self) -> bool {
        matches!(self, OfferDecision::AcceptedPending { .. })
    }
}

/// Copies of the committed samples, split by role.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BufferSnapshot {
    pub train: Vec<TrainingSample>,
    pub validation: Vec<TrainingSample>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserChange {
    pub timestamp: f64,
    pub setpoint_index: usize,
}

#[derive(Debug, Clone)]
pub struct SampleBuffer {
    config: AcquisitionConfig,
    env_scales: Vec<f64>,
    setpoint_scales: Vec<f64>,
    pending: VecDeque<TrainingSample>,
    committed: Vec<TrainingSample>,
    user_changes: Vec<UserChange>,
    rng: ChaCha8Rng,
    rng_seed: u64,
    next_id: u64,
    last_offer: Option<f64>,
    last_accepted: Option<(f64, Vec<f64>)>,
    invalidated: usize,
    evicted: usize,
}

impl SampleBuffer {
    /// `env_scales` and `setpoint_scales` divide each coordinate before
    /// distances are taken.
    pub fn new(
        config: AcquisitionConfig,
        env_scales: Vec<f64>,
        setpoint_scales: Vec<f64>,
        rng_seed: u64,
    ) -> Result<Self, AcquisitionError> {
        config.validate()?;
        if env_scales.iter().chain(&setpoint_scales).any(|s| !(*s > 0.0)) {
            return Err(AcquisitionError::InvalidConfig("distance scales must be positive".into()));
        }
        Ok(Self {
            config,
            env_scales,
            setpoint_scales,
            pending: VecDeque::new(),
            committed: Vec::new(),
            user_changes: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
            rng_seed,
            next_id: 0,
            last_offer: None,
            last_accepted: None,
            invalidated: 0,
            evicted: 0,
        })
    }

    pub fn for_schema(
        config: AcquisitionConfig,
        env: &EnvSchema,
        setpoints: &SetpointSchema,
        rng_seed: u64,
    ) -> Result<Self, AcquisitionError> {
        Self::new(config, env.scales(), setpoints.scales(), rng_seed)
    }

    pub fn config(&self) -> &AcquisitionConfig {
        &self.config
    }

    pub fn rng_seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn env_dim(&self) -> usize {
        self.env_scales.len()
    }

    pub fn setpoint_dim(&self) -> usize {
        self.setpoint_scales.len()
    }

    pub fn pending(&self) -> impl Iterator<Item = &TrainingSample> {
        self.pending.iter()
    }

    pub fn committed(&self) -> &[TrainingSample] {
        &self.committed
    }

    pub fn user_changes(&self) -> &[UserChange] {
        &self.user_changes
    }

    pub fn invalidated_count(&self) -> usize {
        self.invalidated
    }

    pub fn evicted_count(&self) -> usize {
        self.evicted
    }

    pub fn offer_sample(
        &mut self,
        env: &EnvSample,
        setpoints: &[f64],
        manual_mask: &[bool],
    ) -> Result<OfferDecision, AcquisitionError> {
        if env.values.len() != self.env_dim() {
            return Err(AcquisitionError::DimensionMismatch {
                what: "environment values",
                expected: self.env_dim(),
                found: env.values.len(),
            });
        }
        if setpoints.len() != self.setpoint_dim() {
            return Err(AcquisitionError::DimensionMismatch {
                what: "setpoints",
                expected: self.setpoint_dim(),
                found: setpoints.len(),
            });
        }
        if manual_mask.len() != self.setpoint_dim() {
            return Err(AcquisitionError::DimensionMismatch {
                what: "manual mask",
                expected: self.setpoint_dim(),
                found: manual_mask.len(),
            });
        }
        let t = env.timestamp;
        if let Some(prev) = self.last_offer {
            if t < prev {
                return Err(AcquisitionError::TimestampRegression { previous: prev, found: t });
            }
        }
        self.last_offer = Some(t);

        if !manual_mask.iter().any(|&m| m) {
            return Ok(OfferDecision::Rejected(RejectReason::NoManualSetpoint));
        }
        if let Some((last_t, _)) = &self.last_accepted {
            if t - last_t < self.config.min_interval_s {
                return Ok(OfferDecision::Rejected(RejectReason::TooSoon));
            }
        }
        if !self.novel(&env.values, setpoints) {
            return Ok(OfferDecision::Rejected(RejectReason::TooSimilar));
        }

        let id = self.next_id;
        self.next_id += 1;
        self.last_accepted = Some((t, env.values.clone()));
        self.pending.push_back(TrainingSample {
            id,
            env: env.clone(),
            setpoints: setpoints.to_vec(),
            manual_mask: manual_mask.to_vec(),
            state: SampleState::Pending,
            split: Split::Train,
        });
        Ok(OfferDecision::AcceptedPending { id })
    }

    fn novel(&self, env: &[f64], setpoints: &[f64]) -> bool {
        let (change, distance) = (self.config.change_fraction, self.config.min_distance);
        if change.is_none() && distance.is_none() {
            return true;
        }
        if let Some(fraction) = change {
            match &self.last_accepted {
                None => return true,
                Some((_, last)) => {
                    let changed = last
                        .iter()
                        .zip(env)
                        .any(|(&old, &new)| relative_change(old, new) >= fraction);
                    if changed {
                        return true;
                    }
                }
            }
        }
        if let Some(min) = distance {
            return self.nearest_distance(env, setpoints).is_none_or(|d| d >= min);
        }
        false
    }

    /// Smallest normalized distance from `(env, setpoints)` to any stored
    /// (pending or committed) sample, or `None` if nothing is stored.
    pub fn nearest_distance(&self, env: &[f64], setpoints: &[f64]) -> Option<f64> {
        self.pending
            .iter()
            .chain(&self.committed)
            .map(|s| self.distance_sq(s, env, setpoints))
            .min_by(|a, b| a.total_cmp(b))
            .map(f64::sqrt)
    }

    fn distance_sq(&self, s: &TrainingSample, env: &[f64], setpoints: &[f64]) -> f64 {
        let e: f64 = s
            .env
            .values
            .iter()
            .zip(env)
            .zip(&self.env_scales)
            .map(|((a, b), k)| ((a - b) / k).powi(2))
            .sum();
        let p: f64 = s
            .setpoints
            .iter()
            .zip(setpoints)
            .zip(&self.setpoint_scales)
            .map(|((a, b), k)| ((a - b) / k).powi(2))
            .sum();
        e + p
    }

    /// Record a user setpoint change and invalidate pending samples within
    /// half the dead time of it.
    pub fn notify_user_change(&mut self, timestamp: f64, setpoint_index: usize) -> Result<(), AcquisitionError> {
        if setpoint_index >= self.setpoint_dim() {
            return Err(AcquisitionError::IndexOutOfRange {
                index: setpoint_index,
                len: self.setpoint_dim(),
            });
        }
        if let Some(last) = self.user_changes.last() {
            if timestamp < last.timestamp {
                return Err(AcquisitionError::TimestampRegression {
                    previous: last.timestamp,
                    found: timestamp,
                });
            }
        }
        self.user_changes.push(UserChange {
            timestamp,
            setpoint_index,
        });
        let half = self.config.half_dead_time();
        let before = self.pending.len();
        self.pending.retain(|s| (s.env.timestamp - timestamp).abs() >= half);
        self.invalidated += before - self.pending.len();
        Ok(())
    }

    fn near_user_change(&self, t: f64) -> bool {
        let half = self.config.half_dead_time();
        // user_changes is sorted by time; only changes in (t - half, t + half) matter.
        let start = self.user_changes.partition_point(|c| c.timestamp <= t - half);
        self.user_changes[start..]
            .iter()
            .take_while(|c| c.timestamp < t + half)
            .any(|c| (c.timestamp - t).abs() < half)
    }

    /// Commit every pending sample whose half dead time has elapsed at `now`.
    pub fn commit_ready(&mut self, now: f64) -> Vec<TrainingSample> {
        let half = self.config.half_dead_time();
        let mut out = Vec::new();
        while let Some(front) = self.pending.front() {
            if now - front.env.timestamp < half {
                break;
            }
            let mut sample = self.pending.pop_front().expect("front exists");
            if self.near_user_change(sample.env.timestamp) {
                self.invalidated += 1;
                continue;
            }
            sample.state = SampleState::Committed;
            sample.split = if self.rng.random::<f64>() < self.config.validation_fraction {
                Split::Validation
            } else {
                Split::Train
            };
            self.committed.push(sample.clone());
            out.push(sample);
        }
        out
    }

    pub fn snapshot(&self) -> BufferSnapshot {
        let (validation, train) = self
            .committed
            .iter()
            .cloned()
            .partition(|s| s.split == Split::Validation);
        BufferSnapshot { train, validation }
    }

    /// Drop the oldest train samples (then validation samples, if no train
    /// samples remain) until the committed set fits the capacity.
    pub fn evict_if_full(&mut self) -> usize {
        let cap = self.config.capacity;
        if self.committed.len() <= cap {
            return 0;
        }
        let excess = self.committed.len() - cap;
        let train_total = self.committed.iter().filter(|s| s.split == Split::Train).count();
        let drop_train = excess.min(train_total);
        let mut drop_validation = excess - drop_train;
        let mut remaining_train = drop_train;
        self.committed.retain(|s| match s.split {
            Split::Train if remaining_train > 0 => {
                remaining_train -= 1;
                false
            }
            Split::Validation if drop_validation > 0 => {
                drop_validation -= 1;
                false
            }
            _ => true,
        });
        self.evicted += excess;
        excess
    }

    /// Write committed samples as CSV: timestamp, split, env channels,
    /// setpoints, manual flags.
    pub fn write_csv<W: Write>(
        &self,
        out: W,
        env: &EnvSchema,
        setpoints: &SetpointSchema,
    ) -> Result<(), AcquisitionError> {
        let csv_err = |e: csv::Error| AcquisitionError::Csv(e.to_string());
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["timestamp".to_string(), "split".to_string()];
        header.extend(env.channels.iter().map(|c| c.name.clone()));
        header.extend(setpoints.setpoints.iter().map(|c| c.name.clone()));
        header.extend(setpoints.setpoints.iter().map(|c| format!("manual_{}", c.name)));
        w.write_record(&header).map_err(csv_err)?;
        for s in &self.committed {
            let mut row = vec![s.env.timestamp.to_string(), s.split.as_str().to_string()];
            row.extend(s.env.values.iter().map(|v| v.to_string()));
            row.extend(s.setpoints.iter().map(|v| v.to_string()));
            row.extend(s.manual_mask.iter().map(|m| u8::from(*m).to_string()));
            w.write_record(&row).map_err(csv_err)?;
        }
        w.flush().map_err(|e| AcquisitionError::Csv(e.to_string()))
    }
}

/// `|new - old| / |old|`, with `|old|` floored at 1e-3 so channels sitting at
/// zero (speed at standstill) still register a change.
pub fn relative_change(old: f64, new: f64) -> f64 {
    (new - old).abs() / old.abs().max(1e-3)
}
