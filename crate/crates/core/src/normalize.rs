//! Per-channel standardization of environment readings and setpoints.

use serde::{Deserialize, Serialize};

use crate::acquisition::TrainingSample;

/// Smallest standard deviation used when scaling a channel.
pub const STD_FLOOR: f64 = 1e-6;

/// Mean and standard deviation for each environment channel and setpoint.
///
/// Stats are only ever derived from committed train-split samples. Setpoint
/// statistics for output `i` use only samples where `i` was user controlled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationStats {
    pub env_mean: Vec<f64>,
    pub env_std: Vec<f64>,
    pub setpoint_mean: Vec<f64>,
    pub setpoint_std: Vec<f64>,
    pub sample_count: usize,
}

impl NormalizationStats {
    /// Zero mean, unit std: normalization is the identity map.
    pub fn identity(env_dim: usize, setpoint_dim: usize) -> Self {
        Self {
            env_mean: vec![0.0; env_dim],
            env_std: vec![1.0; env_dim],
            setpoint_mean: vec![0.0; setpoint_dim],
            setpoint_std: vec![1.0; setpoint_dim],
            sample_count: 0,
        }
    }

    /// Population statistics over `train`. Channels without any usable
    /// sample keep the identity scaling.
    pub fn from_train(train: &[TrainingSample], env_dim: usize, setpoint_dim: usize) -> Self {
        let mut stats = Self::identity(env_dim, setpoint_dim);
        stats.sample_count = train.len();
        if train.is_empty() {
            return stats;
        }

        for c in 0..env_dim {
            let (mean, std) = mean_std(train.iter().map(|s| s.env.values[c]));
            stats.env_mean[c] = mean;
            stats.env_std[c] = std;
        }
        for i in 0..setpoint_dim {
            let used = train.iter().filter(|s| s.manual_mask[i]);
            if used.clone().next().is_none() {
                continue;
            }
            let (mean, std) = mean_std(used.map(|s| s.setpoints[i]));
            stats.setpoint_mean[i] = mean;
            stats.setpoint_std[i] = std;
        }
        stats
    }

    pub fn env_dim(&self) -> usize {
        self.env_mean.len()
    }

    pub fn setpoint_dim(&self) -> usize {
        self.setpoint_mean.len()
    }

    pub fn normalize_env(&self, values: &[f64]) -> Vec<f64> {
        scale(values, &self.env_mean, &self.env_std)
    }

    pub fn denormalize_env(&self, values: &[f64]) -> Vec<f64> {
        unscale(values, &self.env_mean, &self.env_std)
    }

    pub fn normalize_setpoints(&self, values: &[f64]) -> Vec<f64> {
        scale(values, &self.setpoint_mean, &self.setpoint_std)
    }

    pub fn denormalize_setpoints(&self, values: &[f64]) -> Vec<f64> {
        unscale(values, &self.setpoint_mean, &self.setpoint_std)
    }

    pub fn is_finite(&self) -> bool {
        self.env_mean
            .iter()
            .chain(&self.env_std)
            .chain(&self.setpoint_mean)
            .chain(&self.setpoint_std)
            .all(|v| v.is_finite())
    }
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt().max(STD_FLOOR))
}

fn scale(values: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    values
        .iter()
        .zip(mean.iter().zip(std))
        .map(|(v, (m, s))| (v - m) / s)
        .collect()
}

fn unscale(values: &[f64], mean: &[f64], std: &[f64]) -> Vec<f64> {
    values
        .iter()
        .zip(mean.iter().zip(std))
        .map(|(v, (m, s))| v * s + m)
        .collect()
}
