//! Dense feed-forward networks with exact backpropagation and Adam.
//!
//! Every layer computes `Z = X W + b` with `W` stored as `(fan_in, fan_out)`
//! and rows of `X` as samples. Hidden layers apply the network's activation;
//! the final layer is linear (logits or values).

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("network needs at least an input and an output dimension")]
    EmptyDims,
    #[error("layer {0} has zero width")]
    ZeroSizedLayer(usize),
    #[error("{what}: expected {expected} columns, got {got}")]
    ShapeMismatch { what: &'static str, expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Tanh => z.mapv(f64::tanh),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Identity => z.clone(),
        }
    }

    /// Multiplies `grad` in place by the activation derivative at `z`.
    fn backprop(self, z: &Array2<f64>, a: &Array2<f64>, grad: &mut Array2<f64>) {
        match self {
            Activation::Tanh => grad.zip_mut_with(a, |g, &t| *g *= 1.0 - t * t),
            Activation::Relu => grad.zip_mut_with(z, |g, &v| {
                if v <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Identity => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }
}

/// Per-parameter gradients, laid out like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(mlp: &Mlp) -> Self {
        Self {
            layers: mlp.layers.iter().map(Dense::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .map(|l| l.weight.iter().chain(l.bias.iter()).map(|g| g * g).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    /// Rescales to at most `max_norm` in global L2 norm.
    pub fn clip_norm(&mut self, max_norm: f64) {
        let n = self.norm();
        if n > max_norm && n > 0.0 {
            self.scale(max_norm / n);
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `activations[0]` is the input batch, `activations[i + 1]` the output of layer `i`.
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds the input at least")
    }

    /// Output of the last hidden layer (the input batch for a single-layer net).
    pub fn penultimate(&self) -> &Array2<f64> {
        &self.activations[self.activations.len() - 2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self { lr, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AdamState {
    m: Vec<Dense>,
    v: Vec<Dense>,
    step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activation: Activation,
    layers: Vec<Dense>,
    adam: AdamState,
}

fn check_dims(dims: &[usize]) -> Result<(), NnError> {
    if dims.len() < 2 {
        return Err(NnError::EmptyDims);
    }
    if let Some(i) = dims.iter().position(|&d| d == 0) {
        return Err(NnError::ZeroSizedLayer(i));
    }
    Ok(())
}

/// Glorot-uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn init_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Mlp {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(dims: &[usize], activation: Activation, seed: u64) -> Result<Self, NnError> {
        Self::init_with(dims, activation, &mut rng::seeded(seed))
    }

    pub fn init_with<R: Rng + ?Sized>(dims: &[usize], activation: Activation, rng: &mut R) -> Result<Self, NnError> {
        check_dims(dims)?;
        let layers = dims
            .windows(2)
            .map(|w| {
                let bound = init_bound(w[0], w[1]);
                Dense {
                    weight: Array2::from_shape_simple_fn((w[0], w[1]), || rng.random_range(-bound..=bound)),
                    bias: Array1::zeros(w[1]),
                }
            })
            .collect();
        Ok(Self::from_layers(dims.to_vec(), activation, layers))
    }

    /// Builds a network from explicit layers. Panics if shapes disagree with `dims`.
    pub fn from_layers(dims: Vec<usize>, activation: Activation, layers: Vec<Dense>) -> Self {
        assert_eq!(dims.len(), layers.len() + 1, "one layer per dims window");
        for (i, l) in layers.iter().enumerate() {
            assert_eq!(l.weight.dim(), (dims[i], dims[i + 1]), "weight shape of layer {i}");
            assert_eq!(l.bias.len(), dims[i + 1], "bias length of layer {i}");
        }
        let zeros: Vec<Dense> = layers.iter().map(Dense::zeros_like).collect();
        Self {
            dims,
            activation,
            adam: AdamState {
                m: zeros.clone(),
                v: zeros,
                step: 0,
            },
            layers,
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().expect("dims checked non-empty")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn adam_steps(&self) -> u64 {
        self.adam.step
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weight.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, cols: usize) -> Result<(), NnError> {
        if cols != self.input_dim() {
            return Err(NnError::ShapeMismatch {
                what: "input batch",
                expected: self.input_dim(),
                got: cols,
            });
        }
        Ok(())
    }

    pub fn forward(&self, batch: &Array2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(batch.ncols())?;
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(batch.clone());
        for (i, layer) in self.layers.iter().enumerate() {
            let z = activations[i].dot(&layer.weight) + &layer.bias;
            let a = if i == last { z.clone() } else { self.activation.apply(&z) };
            pre_activations.push(z);
            activations.push(a);
        }
        let out = activations[self.layers.len()].clone();
        Ok((
            out,
            ForwardCache {
                activations,
                pre_activations,
            },
        ))
    }

    /// Forward pass without keeping intermediates.
    pub fn predict(&self, batch: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(batch.ncols())?;
        let last = self.layers.len() - 1;
        let mut x = batch.dot(&self.layers[0].weight) + &self.layers[0].bias;
        if last > 0 {
            x = self.activation.apply(&x);
        }
        for (i, layer) in self.layers.iter().enumerate().skip(1) {
            x = x.dot(&layer.weight) + &layer.bias;
            if i != last {
                x = self.activation.apply(&x);
            }
        }
        Ok(x)
    }

    pub fn predict_one(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let batch = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        Ok(self.predict(&batch)?.into_raw_vec_and_offset().0)
    }

    /// Last hidden-layer activations for a single input.
    pub fn hidden_one(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let batch = Array2::from_shape_vec((1, input.len()), input.to_vec()).expect("row vector");
        let (_, cache) = self.forward(&batch)?;
        Ok(cache.penultimate().row(0).to_vec())
    }

    /// Exact gradients of `sum(output_grad * output)` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &Array2<f64>) -> Result<Gradients, NnError> {
        let out = cache.output();
        if output_grad.dim() != out.dim() || cache.pre_activations.len() != self.layers.len() {
            return Err(NnError::ShapeMismatch {
                what: "output gradient",
                expected: out.ncols(),
                got: output_grad.ncols(),
            });
        }
        let n = self.layers.len();
        let mut grads: Vec<Dense> = Vec::with_capacity(n);
        let mut delta = output_grad.clone();
        for i in (0..n).rev() {
            if i != n - 1 {
                self.activation
                    .backprop(&cache.pre_activations[i], &cache.activations[i + 1], &mut delta);
            }
            let weight = cache.activations[i].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if i > 0 {
                delta = delta.dot(&self.layers[i].weight.t());
            }
            grads.push(Dense { weight, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// Bias-corrected Adam descent step.
    pub fn adam_step(&mut self, grads: &Gradients, cfg: &AdamConfig) {
        debug_assert_eq!(grads.layers.len(), self.layers.len());
        self.adam.step += 1;
        let t = self.adam.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for ((p, g), (m, v)) in self
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.adam.m.iter_mut().zip(self.adam.v.iter_mut()))
        {
            let upd = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.lr * (*m / c1) / ((*v / c2).sqrt() + cfg.eps);
            };
            ndarray::Zip::from(&mut p.weight)
                .and(&g.weight)
                .and(&mut m.weight)
                .and(&mut v.weight)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
            ndarray::Zip::from(&mut p.bias)
                .and(&g.bias)
                .and(&mut m.bias)
                .and(&mut v.bias)
                .for_each(|p, &g, m, v| upd(p, g, m, v));
        }
    }

    /// Parameters in checkpoint order: per layer, row-major weights then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::Checkpoint(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = it.next().expect("length checked"));
            l.bias.iter_mut().for_each(|b| *b = it.next().expect("length checked"));
        }
        Ok(())
    }

    pub fn checkpoint(&self) -> MlpCheckpoint {
        MlpCheckpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            dims: self.dims.clone(),
            activation: self.activation,
            params: self.flat_params(),
        }
    }

    /// Restores parameters; optimizer state starts fresh.
    pub fn from_checkpoint(ckpt: &MlpCheckpoint) -> Result<Self, NnError> {
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(NnError::Checkpoint(format!("unknown format `{}`", ckpt.format)));
        }
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(NnError::Checkpoint(format!("unsupported version {}", ckpt.version)));
        }
        check_dims(&ckpt.dims)?;
        let layers = ckpt.dims.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        let mut mlp = Self::from_layers(ckpt.dims.clone(), ckpt.activation, layers);
        mlp.set_flat_params(&ckpt.params)?;
        Ok(mlp)
    }
}

pub const CHECKPOINT_FORMAT: &str = "cammarl-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// JSON checkpoint: a dims header plus all parameters in [`Mlp::flat_params`] order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpCheckpoint {
    pub format: String,
    pub version: u32,
    pub dims: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

/// Cross-entropy of `softmax(logits)` against `label`, with its logit gradient.
pub fn softmax_cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>), NnError> {
    if label >= logits.len() {
        return Err(NnError::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    let logp = log_softmax(logits);
    let mut grad: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
    grad[label] -= 1.0;
    Ok((-logp[label], grad))
}

/// Rows of `rows` stacked into a batch matrix.
pub fn batch_from_rows<'a, I>(rows: I, width: usize) -> Array2<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let mut data = Vec::new();
    let mut n = 0;
    for r in rows {
        debug_assert_eq!(r.len(), width);
        data.extend_from_slice(r);
        n += 1;
    }
    Array2::from_shape_vec((n, width), data).expect("rows share a width")
}
