//! Dense feed-forward network with masked squared-error backpropagation.
//!
//! Layer weights are row-major with shape `(outputs, inputs)`; row `r` holds
//! the incoming weights of destination unit `r`. Hidden layers use the
//! configured activation, the output layer is always the identity.
//!
//! All training entry points work on [`Example`]s, which are already in
//! normalized space. The `*_samples` helpers accept raw [`TrainingSample`]s
//! and a [`NormalizationStats`] and convert on the fly.

use std::borrow::Borrow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::TrainingSample;
use crate::normalize::NormalizationStats;

#[derive(Debug, Error, PartialEq)]
pub enum NetError {
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("output mask selects no output")]
    EmptyMask,
    #[error("learning rate must be positive and finite, got {0}")]
    InvalidLearningRate(f64),
}

pub type Result<T> = std::result::Result<T, NetError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a` and input `z`.
    #[inline]
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    inputs: usize,
    outputs: usize,
    weights: Vec<f64>,
    biases: Vec<f64>,
}

impl Layer {
    pub fn new(inputs: usize, outputs: usize, weights: Vec<f64>, biases: Vec<f64>) -> Result<Self> {
        if weights.len() != inputs * outputs {
            return Err(NetError::DimensionMismatch {
                what: "layer weights",
                expected: inputs * outputs,
                found: weights.len(),
            });
        }
        if biases.len() != outputs {
            return Err(NetError::DimensionMismatch {
                what: "layer biases",
                expected: outputs,
                found: biases.len(),
            });
        }
        Ok(Self {
            inputs,
            outputs,
            weights,
            biases,
        })
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn biases(&self) -> &[f64] {
        &self.biases
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.weights[r * self.inputs..(r + 1) * self.inputs]
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn biases_mut(&mut self) -> &mut [f64] {
        &mut self.biases
    }

    fn affine_into(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.biases.iter().enumerate().map(|(r, b)| {
            let row = &self.weights[r * self.inputs..(r + 1) * self.inputs];
            b + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>()
        }));
    }
}

/// Feed-forward network. Immutable once built: training produces new values.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    layers: Vec<Layer>,
    hidden_activation: Activation,
    version: u64,
}

/// Which outputs contribute to the loss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OutputMask(Vec<bool>);

impl OutputMask {
    pub fn new(flags: Vec<bool>) -> Self {
        Self(flags)
    }

    pub fn all(n: usize) -> Self {
        Self(vec![true; n])
    }

    pub fn only(n: usize, index: usize) -> Self {
        let mut flags = vec![false; n];
        flags[index] = true;
        Self(flags)
    }

    pub fn flags(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn any(&self) -> bool {
        self.0.iter().any(|&f| f)
    }
}

/// One normalized training pair. `mask[i]` is false where the target for
/// output `i` is not trusted; such entries never produce an error signal.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    pub mask: Vec<bool>,
}

impl Example {
    pub fn from_sample(sample: &TrainingSample, norm: &NormalizationStats) -> Self {
        Self {
            input: norm.normalize_env(&sample.env.values),
            target: norm.normalize_setpoints(&sample.setpoints),
            mask: sample.manual_mask.clone(),
        }
    }
}

/// Parameter-shaped gradients, one entry per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().flatten().chain(self.biases.iter().flatten())
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|g| g.is_finite())
    }
}

struct Trace {
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
}

impl Network {
    /// Fresh network with weights drawn uniformly from `(-1, 1) / sqrt(fan_in)`
    /// and zero biases.
    pub fn new(layer_sizes: &[usize], hidden_activation: Activation, seed: u64) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(NetError::InvalidTopology(format!(
                "need at least 2 layer sizes, got {}",
                layer_sizes.len()
            )));
        }
        if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
            return Err(NetError::InvalidTopology(format!("layer {pos} has size 0")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights = (0..fan_in * fan_out)
                    .map(|_| rng.random_range(-1.0..1.0) * bound)
                    .collect();
                Layer {
                    inputs: fan_in,
                    outputs: fan_out,
                    weights,
                    biases: vec![0.0; fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            hidden_activation,
            version: 0,
        })
    }

    /// Assemble a network from explicit layers, checking that consecutive
    /// layers chain and all parameters are finite.
    pub fn from_layers(layers: Vec<Layer>, hidden_activation: Activation, version: u64) -> Result<Self> {
        if layers.is_empty() {
            return Err(NetError::InvalidTopology("no layers".into()));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].outputs != pair[1].inputs {
                return Err(NetError::InvalidTopology(format!(
                    "layer {} outputs {} units but layer {} expects {}",
                    k,
                    pair[0].outputs,
                    k + 1,
                    pair[1].inputs
                )));
            }
        }
        if layers.iter().any(|l| l.inputs == 0 || l.outputs == 0) {
            return Err(NetError::InvalidTopology("zero-sized layer".into()));
        }
        let net = Self {
            layers,
            hidden_activation,
            version,
        };
        if !net.is_finite() {
            return Err(NetError::NonFinite("network parameters"));
        }
        Ok(net)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden_activation
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn with_version(mut self, version: u64) -> Self {
        self.version = version;
        self
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.biases).all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut trace = self.trace(input);
        Ok(trace.post.pop().unwrap_or_default())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(NetError::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                found: input.len(),
            });
        }
        if !input.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite("network input"));
        }
        Ok(())
    }

    fn check_example(&self, ex: &Example) -> Result<()> {
        self.check_input(&ex.input)?;
        let out = self.output_dim();
        if ex.target.len() != out {
            return Err(NetError::DimensionMismatch {
                what: "example target",
                expected: out,
                found: ex.target.len(),
            });
        }
        if ex.mask.len() != out {
            return Err(NetError::DimensionMismatch {
                what: "example mask",
                expected: out,
                found: ex.mask.len(),
            });
        }
        if !ex.target.iter().all(|v| v.is_finite()) {
            return Err(NetError::NonFinite("example target"));
        }
        Ok(())
    }

    fn trace(&self, input: &[f64]) -> Trace {
        let n = self.layers.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Vec<f64>> = Vec::with_capacity(n);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.outputs);
            layer.affine_into(post.last().map_or(input, |v| v.as_slice()), &mut z);
            let a = if k + 1 == n {
                z.clone()
            } else {
                z.iter().map(|&v| self.hidden_activation.apply(v)).collect()
            };
            pre.push(z);
            post.push(a);
        }
        Trace { pre, post }
    }

    /// Mean squared error of each output over the examples whose mask
    /// includes that output. Outputs without any such example report 0.
    pub fn loss_per_output(&self, examples: &[Example]) -> Result<Vec<f64>> {
        if examples.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        let out = self.output_dim();
        let mut sum = vec![0.0; out];
        let mut count = vec![0usize; out];
        for ex in examples {
            self.check_example(ex)?;
            let y = self.trace(&ex.input).post.pop().unwrap_or_default();
            for i in 0..out {
                if ex.mask[i] {
                    let d = y[i] - ex.target[i];
                    sum[i] += d * d;
                    count[i] += 1;
                }
            }
        }
        Ok(sum
            .iter()
            .zip(&count)
            .map(|(&s, &c)| if c == 0 { 0.0 } else { s / c as f64 })
            .collect())
    }

    /// Training objective: `(1/B) * sum_s sum_i m_si * (y_si - t_si)^2`
    /// where `m_si` combines the output mask with the example's own mask.
    pub fn masked_loss<E: Borrow<Example>>(&self, batch: &[E], mask: &OutputMask) -> Result<f64> {
        self.check_batch(batch, mask)?;
        let mut total = 0.0;
        for ex in batch {
            let ex = ex.borrow();
            let y = self.trace(&ex.input).post.pop().unwrap_or_default();
            for i in 0..y.len() {
                if mask.0[i] && ex.mask[i] {
                    let d = y[i] - ex.target[i];
                    total += d * d;
                }
            }
        }
        Ok(total / batch.len() as f64)
    }

    fn check_batch<E: Borrow<Example>>(&self, batch: &[E], mask: &OutputMask) -> Result<()> {
        if batch.is_empty() {
            return Err(NetError::EmptyDataset);
        }
        if mask.len() != self.output_dim() {
            return Err(NetError::DimensionMismatch {
                what: "output mask",
                expected: self.output_dim(),
                found: mask.len(),
            });
        }
        if !mask.any() {
            return Err(NetError::EmptyMask);
        }
        batch.iter().try_for_each(|ex| self.check_example(ex.borrow()))
    }

    /// Gradient of [`Network::masked_loss`] by backpropagation.
    pub fn gradient<E: Borrow<Example>>(&self, batch: &[E], mask: &OutputMask) -> Result<Gradients> {
        self.check_batch(batch, mask)?;
        let mut grads = Gradients::zeros_like(self);
        let scale = 2.0 / batch.len() as f64;
        let n = self.layers.len();

        let mut delta: Vec<f64> = Vec::new();
        let mut next_delta: Vec<f64> = Vec::new();
        for ex in batch {
            let ex = ex.borrow();
            let trace = self.trace(&ex.input);
            let y = &trace.post[n - 1];
            delta.clear();
            delta.extend((0..y.len()).map(|i| {
                if mask.0[i] && ex.mask[i] {
                    scale * (y[i] - ex.target[i])
                } else {
                    0.0
                }
            }));

            for k in (0..n).rev() {
                let layer = &self.layers[k];
                let input = if k == 0 { &ex.input } else { &trace.post[k - 1] };
                let gw = &mut grads.weights[k];
                let gb = &mut grads.biases[k];
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    gb[r] += d;
                    let row = &mut gw[r * layer.inputs..(r + 1) * layer.inputs];
                    for (g, x) in row.iter_mut().zip(input) {
                        *g += d * x;
                    }
                }
                if k == 0 {
                    break;
                }
                next_delta.clear();
                next_delta.resize(layer.inputs, 0.0);
                for (r, &d) in delta.iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (nd, w) in next_delta.iter_mut().zip(layer.row(r)) {
                        *nd += d * w;
                    }
                }
                let (z, a) = (&trace.pre[k - 1], &trace.post[k - 1]);
                for (j, nd) in next_delta.iter_mut().enumerate() {
                    *nd *= self.hidden_activation.derivative(z[j], a[j]);
                }
                std::mem::swap(&mut delta, &mut next_delta);
            }
        }
        Ok(grads)
    }

    /// Returns `self - lr * grads` as a new network. Parameters whose
    /// gradient is exactly zero are copied unchanged.
    pub fn sgd_step(&self, grads: &Gradients, learning_rate: f64) -> Result<Network> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(NetError::InvalidLearningRate(learning_rate));
        }
        if grads.weights.len() != self.layers.len() || grads.biases.len() != self.layers.len() {
            return Err(NetError::DimensionMismatch {
                what: "gradient layers",
                expected: self.layers.len(),
                found: grads.weights.len(),
            });
        }
        for (layer, (gw, gb)) in self.layers.iter().zip(grads.weights.iter().zip(&grads.biases)) {
            if gw.len() != layer.weights.len() {
                return Err(NetError::DimensionMismatch {
                    what: "weight gradient",
                    expected: layer.weights.len(),
                    found: gw.len(),
                });
            }
            if gb.len() != layer.biases.len() {
                return Err(NetError::DimensionMismatch {
                    what: "bias gradient",
                    expected: layer.biases.len(),
                    found: gb.len(),
                });
            }
        }
        if !grads.is_finite() {
            return Err(NetError::NonFinite("gradients"));
        }

        let mut next = self.clone();
        for (layer, (gw, gb)) in next.layers.iter_mut().zip(grads.weights.iter().zip(&grads.biases)) {
            for (p, &g) in layer.weights.iter_mut().zip(gw).chain(layer.biases.iter_mut().zip(gb)) {
                if g != 0.0 {
                    *p -= learning_rate * g;
                }
            }
        }
        if !next.is_finite() {
            return Err(NetError::NonFinite("updated parameters"));
        }
        Ok(next)
    }
}

fn examples_from(samples: &[TrainingSample], norm: &NormalizationStats) -> Vec<Example> {
    samples.iter().map(|s| Example::from_sample(s, norm)).collect()
}

fn check_norm(net: &Network, samples: &[TrainingSample], norm: &NormalizationStats) -> Result<()> {
    if norm.env_dim() != net.input_dim() {
        return Err(NetError::DimensionMismatch {
            what: "normalization env channels",
            expected: net.input_dim(),
            found: norm.env_dim(),
        });
    }
    if norm.setpoint_dim() != net.output_dim() {
        return Err(NetError::DimensionMismatch {
            what: "normalization setpoints",
            expected: net.output_dim(),
            found: norm.setpoint_dim(),
        });
    }
    for s in samples {
        if s.env.values.len() != net.input_dim() {
            return Err(NetError::DimensionMismatch {
                what: "sample env",
                expected: net.input_dim(),
                found: s.env.values.len(),
            });
        }
        if s.setpoints.len() != net.output_dim() || s.manual_mask.len() != net.output_dim() {
            return Err(NetError::DimensionMismatch {
                what: "sample setpoints",
                expected: net.output_dim(),
                found: s.setpoints.len(),
            });
        }
    }
    Ok(())
}

/// Per-output MSE in normalized space over raw training samples.
pub fn loss_per_output(net: &Network, dataset: &[TrainingSample], norm: &NormalizationStats) -> Result<Vec<f64>> {
    if dataset.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    check_norm(net, dataset, norm)?;
    net.loss_per_output(&examples_from(dataset, norm))
}

/// Masked gradient over raw training samples.
pub fn gradient(
    net: &Network,
    batch: &[TrainingSample],
    mask: &OutputMask,
    norm: &NormalizationStats,
) -> Result<Gradients> {
    if batch.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    check_norm(net, batch, norm)?;
    net.gradient(&examples_from(batch, norm), mask)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ex(input: &[f64], target: &[f64]) -> Example {
        Example {
            input: input.to_vec(),
            target: target.to_vec(),
            mask: vec![true; target.len()],
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = Network::new(&[2, 1], Activation::Tanh, 7).unwrap();
        let b = Network::new(&[2, 1], Activation::Tanh, 7).unwrap();
        let bits = |n: &Network| -> Vec<u64> {
            n.layers().iter().flat_map(|l| l.weights().iter().map(|w| w.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = Network::new(&[2, 1], Activation::Tanh, 8).unwrap();
        assert_ne!(bits(&a), bits(&c));
        assert_eq!(a.version(), 0);
    }

    #[test]
    fn init_shapes() {
        let n = Network::new(&[3, 4, 2], Activation::Tanh, 1).unwrap();
        assert_eq!(n.layers()[0].weights().len(), 12);
        assert_eq!(n.layers()[0].biases().len(), 4);
        assert_eq!(n.layers()[1].weights().len(), 8);
        assert_eq!(n.layers()[1].biases().len(), 2);
        assert!(n.layers().iter().all(|l| l.biases().iter().all(|&b| b == 0.0)));
        assert_eq!(n.layer_sizes(), vec![3, 4, 2]);
    }

    #[test]
    fn init_within_fan_in_bound() {
        let n = Network::new(&[5, 8, 8, 3], Activation::Tanh, 1).unwrap();
        for l in n.layers() {
            let bound = 3.0 / (l.inputs() as f64).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() <= bound));
            // The draw never exceeds the uniform support either.
            let tight = 1.0 / (l.inputs() as f64).sqrt();
            assert!(l.weights().iter().all(|w| w.abs() < tight));
        }
    }

    #[test]
    fn rejects_bad_topology() {
        assert!(matches!(Network::new(&[], Activation::Tanh, 0), Err(NetError::InvalidTopology(_))));
        assert!(matches!(Network::new(&[3], Activation::Tanh, 0), Err(NetError::InvalidTopology(_))));
        assert!(matches!(Network::new(&[3, 0, 1], Activation::Tanh, 0), Err(NetError::InvalidTopology(_))));
    }

    #[test]
    fn zero_weights_give_bias() {
        let layer = Layer::new(3, 1, vec![0.0; 3], vec![0.75]).unwrap();
        let n = Network::from_layers(vec![layer], Activation::Tanh, 0).unwrap();
        assert_eq!(n.forward(&[1.0, -5.0, 9.0]).unwrap(), vec![0.75]);
        assert_eq!(n.forward(&[0.0, 0.0, 0.0]).unwrap(), vec![0.75]);
    }

    #[test]
    fn affine_single_layer() {
        let layer = Layer::new(2, 1, vec![1.0, 2.0], vec![0.5]).unwrap();
        let n = Network::from_layers(vec![layer], Activation::Relu, 0).unwrap();
        assert_eq!(n.forward(&[3.0, 4.0]).unwrap(), vec![11.5]);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let n = Network::new(&[2, 3, 1], Activation::Tanh, 0).unwrap();
        assert!(matches!(n.forward(&[1.0]), Err(NetError::DimensionMismatch { .. })));
        assert_eq!(n.forward(&[1.0, f64::NAN]), Err(NetError::NonFinite("network input")));
    }

    #[test]
    fn from_layers_checks_chain() {
        let a = Layer::new(2, 3, vec![0.0; 6], vec![0.0; 3]).unwrap();
        let b = Layer::new(4, 1, vec![0.0; 4], vec![0.0]).unwrap();
        assert!(Network::from_layers(vec![a, b], Activation::Tanh, 0).is_err());
        assert!(Layer::new(2, 3, vec![0.0; 5], vec![0.0; 3]).is_err());
        let nan = Layer::new(1, 1, vec![f64::NAN], vec![0.0]).unwrap();
        assert!(Network::from_layers(vec![nan], Activation::Tanh, 0).is_err());
    }

    #[test]
    fn exact_fit_has_zero_loss_and_gradient() {
        let n = Network::new(&[2, 4, 2], Activation::Tanh, 3).unwrap();
        let batch: Vec<Example> = [[0.1, 0.2], [-0.5, 0.9], [1.0, -1.0]]
            .iter()
            .map(|x| ex(x, &n.forward(x).unwrap()))
            .collect();
        assert_eq!(n.loss_per_output(&batch).unwrap(), vec![0.0, 0.0]);
        let g = n.gradient(&batch, &OutputMask::all(2)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_sample_loss_is_squared_error() {
        let n = Network::new(&[2, 3, 2], Activation::Tanh, 5).unwrap();
        let x = [0.3, -0.7];
        let p = n.forward(&x).unwrap();
        let t = [1.0, -2.0];
        let l = n.loss_per_output(&[ex(&x, &t)]).unwrap();
        assert_eq!(l, vec![(p[0] - t[0]).powi(2), (p[1] - t[1]).powi(2)]);
    }

    #[test]
    fn loss_rejects_empty() {
        let n = Network::new(&[1, 1], Activation::Tanh, 0).unwrap();
        assert_eq!(n.loss_per_output(&[]), Err(NetError::EmptyDataset));
    }

    #[test]
    fn masked_output_row_gets_zero_gradient() {
        let n = Network::new(&[2, 3, 2], Activation::Tanh, 11).unwrap();
        let batch = vec![ex(&[0.5, -0.2], &[3.0, -3.0]), ex(&[-1.0, 0.4], &[-2.0, 1.0])];
        let g = n.gradient(&batch, &OutputMask::only(2, 0)).unwrap();
        // output layer is (2 x 3); row 1 belongs to output 1
        assert!(g.weights[1][3..6].iter().all(|&v| v == 0.0));
        assert_eq!(g.biases[1][1], 0.0);
        assert!(g.weights[1][0..3].iter().any(|&v| v != 0.0));
        assert!(g.weights[0].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn gradient_rejects_bad_mask() {
        let n = Network::new(&[2, 2], Activation::Tanh, 0).unwrap();
        let batch = vec![ex(&[0.0, 0.0], &[1.0, 1.0])];
        assert_eq!(
            n.gradient(&batch, &OutputMask::new(vec![false, false])),
            Err(NetError::EmptyMask)
        );
        assert!(matches!(
            n.gradient(&batch, &OutputMask::all(3)),
            Err(NetError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            n.gradient(&[ex(&[0.0], &[1.0, 1.0])], &OutputMask::all(2)),
            Err(NetError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn sgd_step_basics() {
        let layer = Layer::new(1, 1, vec![0.5], vec![0.25]).unwrap();
        let n = Network::from_layers(vec![layer], Activation::Tanh, 4).unwrap();
        let zero = Gradients::zeros_like(&n);
        assert_eq!(n.sgd_step(&zero, 0.1).unwrap(), n);

        let g = Gradients {
            weights: vec![vec![0.2]],
            biases: vec![vec![-0.1]],
        };
        let m = n.sgd_step(&g, 1.0).unwrap();
        assert_eq!(m.layers()[0].weights()[0], 0.5 - 0.2);
        assert_eq!(m.layers()[0].biases()[0], 0.25 + 0.1);
        assert_eq!(m.version(), 4);
        // input untouched
        assert_eq!(n.layers()[0].weights()[0], 0.5);

        assert!(matches!(n.sgd_step(&g, 0.0), Err(NetError::InvalidLearningRate(_))));
        let bad = Gradients {
            weights: vec![vec![f64::INFINITY]],
            biases: vec![vec![0.0]],
        };
        assert_eq!(n.sgd_step(&bad, 0.1), Err(NetError::NonFinite("gradients")));
        let wrong = Gradients {
            weights: vec![vec![0.0, 0.0]],
            biases: vec![vec![0.0]],
        };
        assert!(matches!(n.sgd_step(&wrong, 0.1), Err(NetError::DimensionMismatch { .. })));
    }

    #[test]
    fn repeated_calls_are_bit_identical() {
        let n = Network::new(&[3, 5, 2], Activation::Relu, 9).unwrap();
        let batch = vec![ex(&[0.1, 0.2, 0.3], &[1.0, 0.0]), ex(&[-0.4, 0.8, 0.0], &[0.0, 1.0])];
        let a = n.gradient(&batch, &OutputMask::all(2)).unwrap();
        let b = n.gradient(&batch, &OutputMask::all(2)).unwrap();
        let bits = |g: &Gradients| g.iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }
}
