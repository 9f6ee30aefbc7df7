//! Per-setpoint automation state machine.
//!
//! Transitions: manual -> proposed (enough consecutive passing rounds),
//! proposed -> automated (user accepts), proposed -> manual (user rejects),
//! any -> manual (user releases).

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TrainingReport;
use crate::schema::AutomationMode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HandoverError {
    #[error("setpoint {index} out of range for {len} setpoints")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("setpoint {index} has no pending proposal (state {mode:?})")]
    NotProposed { index: usize, mode: AutomationMode },
    #[error("setpoint {index} is not automated (state {mode:?})")]
    NotAutomated { index: usize, mode: AutomationMode },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetpointAutomation {
    pub mode: AutomationMode,
    pub consecutive_passes: u32,
    /// Normalized MSE at or below which a round counts as a pass.
    pub loss_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutomationState {
    pub setpoints: Vec<SetpointAutomation>,
}

/// Result of checking one training report against the state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HandoverOutcome {
    /// Outputs that just became `proposed`.
    pub proposals: Vec<usize>,
    /// Automated outputs whose validation loss exceeds the degradation bound.
    pub degraded: Vec<usize>,
}

impl AutomationState {
    pub fn all_manual(n: usize, loss_threshold: f64) -> Self {
        Self {
            setpoints: vec![
                SetpointAutomation {
                    mode: AutomationMode::Manual,
                    consecutive_passes: 0,
                    loss_threshold,
                };
                n
            ],
        }
    }

    pub fn len(&self) -> usize {
        self.setpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.setpoints.is_empty()
    }

    pub fn mode(&self, index: usize) -> AutomationMode {
        self.setpoints[index].mode
    }

    pub fn modes(&self) -> Vec<AutomationMode> {
        self.setpoints.iter().map(|s| s.mode).collect()
    }

    pub fn automated_count(&self) -> usize {
        self.setpoints.iter().filter(|s| s.mode == AutomationMode::Automated).count()
    }

    pub fn proposed(&self) -> Vec<usize> {
        self.indices_in(AutomationMode::Proposed)
    }

    fn indices_in(&self, mode: AutomationMode) -> Vec<usize> {
        self.setpoints
            .iter()
            .enumerate()
            .filter(|(_, s)| s.mode == mode)
            .map(|(i, _)| i)
            .collect()
    }

    fn check(&self, index: usize) -> Result<(), HandoverError> {
        if index >= self.len() {
            return Err(HandoverError::IndexOutOfRange { index, len: self.len() });
        }
        Ok(())
    }

    /// Update pass counters from `report`.
    ///
    /// A round only counts as a pass for output `i` if `i` was trained in
    /// that round, the validation loss was measured on a real validation
    /// split, and the loss is at or below the threshold. Proposed outputs are
    /// frozen until the user answers.
    pub fn evaluate_handover(
        &mut self,
        report: &TrainingReport,
        required_passes: u32,
        degradation_factor: f64,
    ) -> HandoverOutcome {
        let mut outcome = HandoverOutcome::default();
        for (i, sp) in self.setpoints.iter_mut().enumerate() {
            let loss = report.validation_loss.get(i).copied();
            match sp.mode {
                AutomationMode::Manual => {
                    let passed = report.trained.get(i).copied().unwrap_or(false)
                        && !report.provisional.get(i).copied().unwrap_or(true)
                        && loss.is_some_and(|l| l <= sp.loss_threshold);
                    if passed {
                        sp.consecutive_passes += 1;
                    } else {
                        sp.consecutive_passes = 0;
                    }
                    if sp.consecutive_passes >= required_passes {
                        sp.mode = AutomationMode::Proposed;
                        outcome.proposals.push(i);
                    }
                }
                AutomationMode::Proposed => {}
                AutomationMode::Automated => {
                    if loss.is_some_and(|l| l > degradation_factor * sp.loss_threshold) {
                        outcome.degraded.push(i);
                    }
                }
            }
        }
        outcome
    }

    pub fn accept_handover(&mut self, index: usize) -> Result<(), HandoverError> {
        self.check(index)?;
        let sp = &mut self.setpoints[index];
        if sp.mode != AutomationMode::Proposed {
            return Err(HandoverError::NotProposed { index, mode: sp.mode });
        }
        sp.mode = AutomationMode::Automated;
        Ok(())
    }

    /// The user declined a proposal; a new one needs a fresh run of passes.
    pub fn reject_handover(&mut self, index: usize) -> Result<(), HandoverError> {
        self.check(index)?;
        let sp = &mut self.setpoints[index];
        if sp.mode != AutomationMode::Proposed {
            return Err(HandoverError::NotProposed { index, mode: sp.mode });
        }
        sp.mode = AutomationMode::Manual;
        sp.consecutive_passes = 0;
        Ok(())
    }

    /// Return control of `index` to the user from any state.
    pub fn release(&mut self, index: usize) -> Result<(), HandoverError> {
        self.check(index)?;
        let sp = &mut self.setpoints[index];
        sp.mode = AutomationMode::Manual;
        sp.consecutive_passes = 0;
        Ok(())
    }

    /// Like [`AutomationState::release`] but only valid from `automated`.
    pub fn release_automated(&mut self, index: usize) -> Result<(), HandoverError> {
        self.check(index)?;
        let mode = self.setpoints[index].mode;
        if mode != AutomationMode::Automated {
            return Err(HandoverError::NotAutomated { index, mode });
        }
        self.release(index)
    }
}
