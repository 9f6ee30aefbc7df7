//! Atomic publication of trained models.
//!
//! The training context builds candidates off to the side; `publish` swaps a
//! fully built [`PublishedModel`] in with a single pointer store. Readers
//! take an `Arc` to whatever model is current and keep using it for the
//! whole inference, so a reader never sees parameters from two versions.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use arc_swap::ArcSwapOption;
use thiserror::Error;

use crate::nnet::Network;
use crate::normalize::NormalizationStats;

#[derive(Debug, Error, PartialEq)]
pub enum PublishError {
    #[error("candidate has non-finite parameters")]
    NonFinite,
    #[error("candidate normalization does not match network dimensions")]
    ShapeMismatch,
}

/// Network plus the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct PublishedModel {
    pub version: u64,
    pub network: Network,
    pub norm: NormalizationStats,
}

impl PublishedModel {
    /// Raw environment values in, raw (denormalized, unclamped) setpoints out.
    pub fn predict(&self, env: &[f64]) -> Result<Vec<f64>, crate::nnet::NetError> {
        let y = self.network.forward(&self.norm.normalize_env(env))?;
        Ok(self.norm.denormalize_setpoints(&y))
    }
}

#[derive(Debug, Default)]
pub struct ModelSlot {
    current: ArcSwapOption<PublishedModel>,
    last_version: AtomicU64,
    writer: Mutex<()>,
}

impl ModelSlot {
    pub fn new() -> Self {
        Self::default()
    }

    /// Slot that already holds `model`; later publications continue from its version.
    pub fn with_model(network: Network, norm: NormalizationStats) -> Self {
        let version = network.version();
        let slot = Self::default();
        slot.last_version.store(version, Ordering::SeqCst);
        slot.current.store(Some(Arc::new(PublishedModel { version, network, norm })));
        slot
    }

    pub fn load(&self) -> Option<Arc<PublishedModel>> {
        self.current.load_full()
    }

    pub fn version(&self) -> u64 {
        self.last_version.load(Ordering::SeqCst)
    }

    /// Make `network` the model seen by every later reader. Returns the new version.
    pub fn publish(&self, network: Network, norm: NormalizationStats) -> Result<u64, PublishError> {
        if !network.is_finite() || !norm.is_finite() {
            return Err(PublishError::NonFinite);
        }
        if norm.env_dim() != network.input_dim() || norm.setpoint_dim() != network.output_dim() {
            return Err(PublishError::ShapeMismatch);
        }
        let _guard = self.writer.lock().unwrap_or_else(|e| e.into_inner());
        let version = self.last_version.load(Ordering::SeqCst) + 1;
        let model = PublishedModel {
            version,
            network: network.with_version(version),
            norm,
        };
        self.current.store(Some(Arc::new(model)));
        self.last_version.store(version, Ordering::SeqCst);
        Ok(version)
    }
}
