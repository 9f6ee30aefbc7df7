//! User-preference estimation: training rounds, publication and handover.

mod handover;
mod slot;

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use handover::{AutomationState, HandoverError, HandoverOutcome, SetpointAutomation};
pub use slot::{ModelSlot, PublishError, PublishedModel};

use crate::acquisition::{AcquisitionError, BufferSnapshot, EnvSample, SampleBuffer};
use crate::nnet::{Activation, Example, NetError, Network, OutputMask};
use crate::normalize::NormalizationStats;
pub use crate::schema::AutomationMode;
use crate::schema::SetpointVector;

#[derive(Debug, Error, PartialEq)]
pub enum EstimatorError {
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Publish(#[from] PublishError),
    #[error(transparent)]
    Handover(#[from] HandoverError),
    #[error(transparent)]
    Acquisition(#[from] AcquisitionError),
    #[error("setpoint vector has {found} entries, automation state has {expected}")]
    SetpointMismatch { expected: usize, found: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorConfig {
    pub hidden_layers: Vec<usize>,
    pub hidden_activation: Activation,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_per_round: usize,
    /// An output is trained only once this many train samples carry a
    /// user-controlled target for it.
    pub min_samples_per_output: usize,
    pub loss_threshold: f64,
    pub required_passes: u32,
    /// Automated outputs above `degradation_factor * loss_threshold` are flagged.
    pub degradation_factor: f64,
    /// Accept every proposal immediately (headless runs only).
    pub auto_accept: bool,
    pub seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            hidden_layers: vec![16, 16],
            hidden_activation: Activation::Tanh,
            learning_rate: 0.01,
            batch_size: 16,
            epochs_per_round: 20,
            min_samples_per_output: 20,
            loss_threshold: 0.05,
            required_passes: 3,
            degradation_factor: 4.0,
            auto_accept: false,
            seed: 0,
        }
    }
}

impl EstimatorConfig {
    pub fn layer_sizes(&self, env_dim: usize, setpoint_dim: usize) -> Vec<usize> {
        std::iter::once(env_dim)
            .chain(self.hidden_layers.iter().copied())
            .chain(std::iter::once(setpoint_dim))
            .collect()
    }

    pub fn initial_network(&self, env_dim: usize, setpoint_dim: usize) -> Result<Network, NetError> {
        Network::new(&self.layer_sizes(env_dim, setpoint_dim), self.hidden_activation, self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub round_index: u64,
    pub train_loss: Vec<f64>,
    pub validation_loss: Vec<f64>,
    /// Per output: no validation sample carried a user target, so the
    /// validation loss above is the train loss.
    pub provisional: Vec<bool>,
    /// Per output: whether the output was in the training mask.
    pub trained: Vec<bool>,
    pub samples_used: usize,
    pub validation_samples: usize,
    pub published_version: Option<u64>,
}

impl TrainingReport {
    fn idle(round_index: u64, outputs: usize) -> Self {
        Self {
            round_index,
            train_loss: vec![0.0; outputs],
            validation_loss: vec![0.0; outputs],
            provisional: vec![true; outputs],
            trained: vec![false; outputs],
            samples_used: 0,
            validation_samples: 0,
            published_version: None,
        }
    }

    pub fn did_train(&self) -> bool {
        self.trained.iter().any(|&t| t)
    }
}

/// Trained network and the normalization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub network: Network,
    pub norm: NormalizationStats,
}

fn round_seed(seed: u64, round: u64) -> u64 {
    seed ^ round.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// One background training round over a buffer snapshot.
///
/// Normalization is recomputed from the train split and frozen for the
/// round. Each epoch shuffles the train split with a seed derived from
/// `config.seed` and `round_index`, so a round is a pure function of its
/// arguments. When nothing can be trained the candidate is `None`.
pub fn training_round(
    snapshot: &BufferSnapshot,
    current: &Network,
    config: &EstimatorConfig,
    round_index: u64,
) -> Result<(Option<Candidate>, TrainingReport), EstimatorError> {
    let outputs = current.output_dim();
    let mut report = TrainingReport::idle(round_index, outputs);
    if snapshot.train.is_empty() {
        return Ok((None, report));
    }

    let norm = NormalizationStats::from_train(&snapshot.train, current.input_dim(), outputs);
    let train: Vec<Example> = snapshot.train.iter().map(|s| Example::from_sample(s, &norm)).collect();
    let validation: Vec<Example> = snapshot
        .validation
        .iter()
        .map(|s| Example::from_sample(s, &norm))
        .collect();

    let counts = mask_counts(&train, outputs);
    let trained: Vec<bool> = counts
        .iter()
        .map(|&c| c >= config.min_samples_per_output.max(1))
        .collect();
    report.trained = trained.clone();
    report.samples_used = train.len();
    report.validation_samples = validation.len();
    let mask = OutputMask::new(trained);
    if !mask.any() {
        return Ok((None, report));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(round_seed(config.seed, round_index));
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut net = current.clone();
    let mut batch: Vec<&Example> = Vec::with_capacity(config.batch_size.max(1));
    for _ in 0..config.epochs_per_round {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size.max(1)) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| &train[i]));
            let grads = net.gradient(&batch, &mask)?;
            net = net.sgd_step(&grads, config.learning_rate)?;
        }
    }

    report.train_loss = net.loss_per_output(&train)?;
    let val_counts = mask_counts(&validation, outputs);
    let val_loss = if validation.is_empty() {
        report.train_loss.clone()
    } else {
        net.loss_per_output(&validation)?
    };
    for i in 0..outputs {
        if val_counts[i] == 0 {
            report.validation_loss[i] = report.train_loss[i];
            report.provisional[i] = true;
        } else {
            report.validation_loss[i] = val_loss[i];
            report.provisional[i] = false;
        }
    }
    Ok((Some(Candidate { network: net, norm }), report))
}

fn mask_counts(examples: &[Example], outputs: usize) -> Vec<usize> {
    let mut counts = vec![0; outputs];
    for ex in examples {
        for (c, &m) in counts.iter_mut().zip(&ex.mask) {
            *c += usize::from(m);
        }
    }
    counts
}

/// Setpoints to apply: model output for automated entries, the user's
/// values otherwise. Without a published model every entry is the user's.
pub fn propose_setpoints(
    model: Option<&PublishedModel>,
    env: &EnvSample,
    state: &AutomationState,
    manual: &SetpointVector,
) -> Result<SetpointVector, EstimatorError> {
    if manual.len() != state.len() {
        return Err(EstimatorError::SetpointMismatch {
            expected: state.len(),
            found: manual.len(),
        });
    }
    let mut out = manual.clone();
    out.automation = state.modes();
    let automated: Vec<usize> = (0..state.len())
        .filter(|&i| state.mode(i) == AutomationMode::Automated)
        .collect();
    if automated.is_empty() {
        return Ok(out);
    }
    if let Some(model) = model {
        let predicted = model.predict(&env.values)?;
        for i in automated {
            let (lo, hi) = out.bounds[i];
            out.values[i] = predicted[i].clamp(lo, hi);
        }
    }
    Ok(out)
}

/// Give a setpoint back to the user. A release is also a user change for
/// dead-time purposes.
pub fn release_to_manual(
    state: &mut AutomationState,
    buffer: &mut SampleBuffer,
    index: usize,
    timestamp: f64,
) -> Result<(), EstimatorError> {
    state.release(index)?;
    buffer.notify_user_change(timestamp, index)?;
    Ok(())
}

/// Everything a training context needs to run one round off-thread.
#[derive(Debug, Clone)]
pub struct TrainingJob {
    pub snapshot: BufferSnapshot,
    pub network: Network,
    pub config: EstimatorConfig,
    pub round_index: u64,
}

impl TrainingJob {
    pub fn run(&self) -> Result<(Option<Candidate>, TrainingReport), EstimatorError> {
        training_round(&self.snapshot, &self.network, &self.config, self.round_index)
    }
}

/// Output of a completed round after publication and handover evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundResult {
    pub report: TrainingReport,
    pub outcome: HandoverOutcome,
    /// Proposals accepted automatically because `auto_accept` is set.
    pub auto_accepted: Vec<usize>,
}

/// Owns the automation state and the training side of the model slot.
#[derive(Debug)]
pub struct Estimator {
    config: EstimatorConfig,
    slot: Arc<ModelSlot>,
    working: Network,
    state: AutomationState,
    rounds: u64,
}

impl Estimator {
    pub fn new(config: EstimatorConfig, env_dim: usize, setpoint_dim: usize) -> Result<Self, EstimatorError> {
        let working = config.initial_network(env_dim, setpoint_dim)?;
        let state = AutomationState::all_manual(setpoint_dim, config.loss_threshold);
        Ok(Self {
            config,
            slot: Arc::new(ModelSlot::new()),
            working,
            state,
            rounds: 0,
        })
    }

    /// Resume from a stored network. With `publish_now` the stored model is
    /// served right away (a trained or pretrained profile); otherwise it is
    /// only the starting point for training.
    pub fn from_parts(
        config: EstimatorConfig,
        network: Network,
        norm: NormalizationStats,
        state: AutomationState,
        publish_now: bool,
    ) -> Self {
        let slot = if publish_now {
            ModelSlot::with_model(network.clone(), norm)
        } else {
            ModelSlot::new()
        };
        Self {
            config,
            slot: Arc::new(slot),
            working: network,
            state,
            rounds: 0,
        }
    }

    pub fn config(&self) -> &EstimatorConfig {
        &self.config
    }

    pub fn slot(&self) -> Arc<ModelSlot> {
        Arc::clone(&self.slot)
    }

    pub fn current_model(&self) -> Option<Arc<PublishedModel>> {
        self.slot.load()
    }

    pub fn state(&self) -> &AutomationState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut AutomationState {
        &mut self.state
    }

    pub fn working_network(&self) -> &Network {
        &self.working
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn propose(&self, env: &EnvSample, manual: &SetpointVector) -> Result<SetpointVector, EstimatorError> {
        let model = self.slot.load();
        propose_setpoints(model.as_deref(), env, &self.state, manual)
    }

    pub fn job(&self, snapshot: BufferSnapshot) -> TrainingJob {
        TrainingJob {
            snapshot,
            network: self.working.clone(),
            config: self.config.clone(),
            round_index: self.rounds,
        }
    }

    /// Train synchronously on `snapshot`, publish and evaluate handover.
    pub fn run_round(&mut self, snapshot: BufferSnapshot) -> Result<RoundResult, EstimatorError> {
        let result = self.job(snapshot).run()?;
        self.finish_round(result)
    }

    /// Publish the candidate of a finished round (if any) and update the
    /// automation state from its report.
    pub fn finish_round(
        &mut self,
        (candidate, mut report): (Option<Candidate>, TrainingReport),
    ) -> Result<RoundResult, EstimatorError> {
        self.rounds = self.rounds.max(report.round_index) + 1;
        if let Some(c) = candidate {
            let version = self.slot.publish(c.network.clone(), c.norm)?;
            self.working = c.network.with_version(version);
            report.published_version = Some(version);
        }
        let outcome = self.state.evaluate_handover(
            &report,
            self.config.required_passes,
            self.config.degradation_factor,
        );
        let mut auto_accepted = Vec::new();
        if self.config.auto_accept {
            for &i in &outcome.proposals {
                self.state.accept_handover(i)?;
                auto_accepted.push(i);
            }
        }
        Ok(RoundResult {
            report,
            outcome,
            auto_accepted,
        })
    }
}
