//! Under-complete denoising autoencoder with a softmax per feature group.
//!
//! Three dense layers encode, three decode. Hidden layers use `tanh`; the
//! last pre-activation is split along the one-hot [`Layout`] and every
//! feature's slots go through their own softmax, so the output is a class
//! distribution per feature. Training corrupts inputs with Gaussian noise,
//! scores the reconstruction against the clean row with binary cross-entropy
//! averaged over all slots, and updates parameters with Adam plus decoupled
//! weight decay.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::transact::{EncodedMatrix, Layout};

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` inside the loss.
pub const BCE_EPS: f64 = 1e-12;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("invalid network shape: {0}")]
    Shape(String),
    #[error("expected a vector of length {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("loss became non-finite in epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("model document: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub weight_decay: f64,
    /// Standard deviation of the additive Gaussian corruption.
    pub noise_factor: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-3,
            epochs: 5,
            weight_decay: 2e-8,
            noise_factor: 0.5,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(NetError::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(NetError::Config("epochs must be >= 1".into()));
        }
        if !(self.noise_factor >= 0.0 && self.noise_factor.is_finite()) {
            return Err(NetError::Config("noise_factor must be >= 0".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(NetError::Config("weight_decay must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(NetError::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Layer widths of the autoencoder and the feature grouping of its output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub input_dim: usize,
    pub encoder_dims: [usize; 3],
    pub decoder_dims: [usize; 3],
    pub layout: Layout,
}

impl NetworkShape {
    /// Decoder mirrors the encoder back to the input width.
    pub fn new(layout: Layout, encoder_dims: [usize; 3]) -> Result<Self, NetError> {
        let input_dim = layout.width();
        if encoder_dims.contains(&0) {
            return Err(NetError::Shape("hidden layers must be non-empty".into()));
        }
        if encoder_dims[2] >= input_dim {
            return Err(NetError::Shape(format!(
                "code size {} is not smaller than input width {input_dim}",
                encoder_dims[2]
            )));
        }
        Ok(Self {
            input_dim,
            encoder_dims,
            decoder_dims: [encoder_dims[1], encoder_dims[0], input_dim],
            layout,
        })
    }

    /// `ceil(d/2)`, `ceil(d/4)`, `max(2, ceil(d/8))` for input width `d`.
    pub fn default_for(layout: Layout) -> Result<Self, NetError> {
        let d = layout.width();
        let dims = [d.div_ceil(2), d.div_ceil(4), d.div_ceil(8).max(2)];
        Self::new(layout, dims)
    }

    /// Widths of all activations, input first.
    pub fn widths(&self) -> [usize; 7] {
        let [e0, e1, e2] = self.encoder_dims;
        let [d0, d1, d2] = self.decoder_dims;
        [self.input_dim, e0, e1, e2, d0, d1, d2]
    }

    pub fn code_dim(&self) -> usize {
        self.encoder_dims[2]
    }
}

/// Fully connected layer; `weights` is row-major `out_dim x in_dim`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Dense {
    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for o in 0..self.out_dim {
            let row = &self.weights[o * self.in_dim..(o + 1) * self.in_dim];
            let z: f64 = row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[o];
            out.push(z);
        }
    }
}

/// Numerically stable softmax over each feature's slots, in place.
pub fn group_softmax(layout: &Layout, z: &mut [f64]) {
    for f in 0..layout.n_features() {
        let s = &mut z[layout.range(f)];
        let m = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in s.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        for v in s.iter_mut() {
            *v /= sum;
        }
    }
}

/// Mean binary cross-entropy over all slots.
pub fn bce_loss(reconstruction: &[f64], target: &[f64]) -> Result<f64, NetError> {
    if reconstruction.len() != target.len() {
        return Err(NetError::LengthMismatch {
            expected: target.len(),
            got: reconstruction.len(),
        });
    }
    if target.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = reconstruction
        .iter()
        .zip(target)
        .map(|(&p, &y)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / target.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedAutoencoder {
    shape: NetworkShape,
    layers: Vec<Dense>,
    config: TrainingConfig,
    /// Mean training loss per epoch (noisy inputs, clean targets).
    epoch_losses: Vec<f64>,
}

impl TrainedAutoencoder {
    /// Untrained network with weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn initialize(shape: NetworkShape, config: TrainingConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Self::initialize_with(shape, config, &mut rng)
    }

    fn initialize_with(shape: NetworkShape, config: TrainingConfig, rng: &mut ChaCha8Rng) -> Self {
        let widths = shape.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                for v in d.weights.iter_mut().chain(d.bias.iter_mut()) {
                    *v = rng.random_range(-bound..=bound);
                }
                d
            })
            .collect();
        Self {
            shape,
            layers,
            config,
            epoch_losses: Vec::new(),
        }
    }

    /// Assembles a network from explicit layers, checking dimensions and finiteness.
    pub fn from_layers(
        shape: NetworkShape,
        layers: Vec<Dense>,
        config: TrainingConfig,
    ) -> Result<Self, NetError> {
        let net = Self {
            shape,
            layers,
            config,
            epoch_losses: Vec::new(),
        };
        net.check()?;
        Ok(net)
    }

    fn check(&self) -> Result<(), NetError> {
        let widths = self.shape.widths();
        if self.layers.len() != 6 {
            return Err(NetError::Shape(format!("expected 6 layers, got {}", self.layers.len())));
        }
        if self.shape.input_dim != self.shape.layout.width()
            || self.shape.decoder_dims[2] != self.shape.input_dim
            || self.shape.code_dim() >= self.shape.input_dim
        {
            return Err(NetError::Shape("shape is inconsistent with its layout".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim != widths[i]
                || l.out_dim != widths[i + 1]
                || l.weights.len() != l.in_dim * l.out_dim
                || l.bias.len() != l.out_dim
            {
                return Err(NetError::Shape(format!("layer {i} has wrong dimensions")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(NetError::NonFinite);
            }
        }
        Ok(())
    }

    pub fn shape(&self) -> &NetworkShape {
        &self.shape
    }

    pub fn layout(&self) -> &Layout {
        &self.shape.layout
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn epoch_losses(&self) -> &[f64] {
        &self.epoch_losses
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }

    /// Reconstruction of `input`: a probability distribution per feature group.
    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NetError> {
        self.check_input(input)?;
        Ok(self.trace(input).pop().unwrap())
    }

    fn check_input(&self, input: &[f64]) -> Result<(), NetError> {
        if input.len() != self.shape.input_dim {
            return Err(NetError::LengthMismatch {
                expected: self.shape.input_dim,
                got: input.len(),
            });
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFinite);
        }
        Ok(())
    }

    /// Activations of every layer, input first, output last.
    fn trace(&self, input: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.apply(&acts[i], &mut z);
            if i == last {
                group_softmax(&self.shape.layout, &mut z);
            } else {
                z.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(z);
        }
        acts
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), NetError> {
        if params.len() != self.param_count() {
            return Err(NetError::LengthMismatch {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Mean BCE over `inputs` (row-major) against `targets`, and its gradient
    /// with respect to [`Self::flat_params`].
    pub fn loss_and_gradient(
        &self,
        inputs: &[f64],
        targets: &[f64],
    ) -> Result<(f64, Vec<f64>), NetError> {
        let w = self.shape.input_dim;
        if inputs.len() != targets.len() || !inputs.len().is_multiple_of(w) || inputs.is_empty() {
            return Err(NetError::LengthMismatch {
                expected: targets.len(),
                got: inputs.len(),
            });
        }
        let rows_ref: Vec<&[f64]> = inputs.chunks(w).collect();
        let targets_ref: Vec<&[f64]> = targets.chunks(w).collect();
        for r in &rows_ref {
            self.check_input(r)?;
        }
        let mut grads: Vec<Dense> = self
            .layers
            .iter()
            .map(|l| Dense::zeros(l.in_dim, l.out_dim))
            .collect();
        let loss = self.accumulate(&rows_ref, &targets_ref, &mut grads);
        let flat = grads
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect();
        Ok((loss, flat))
    }

    /// Backpropagates the batch-mean BCE into `grads` (which must start at
    /// zero) and returns the loss.
    fn accumulate(&self, inputs: &[&[f64]], targets: &[&[f64]], grads: &mut [Dense]) -> f64 {
        let layout = &self.shape.layout;
        let w = self.shape.input_dim;
        let norm = (inputs.len() * w) as f64;
        let mut total = 0.0;

        for (x, y) in inputs.iter().zip(targets) {
            let acts = self.trace(x);
            let p = acts.last().unwrap();

            // dL/dp, zero where the clamp is active
            let mut g = vec![0.0; w];
            for i in 0..w {
                let pc = p[i].clamp(BCE_EPS, 1.0 - BCE_EPS);
                total -= y[i] * pc.ln() + (1.0 - y[i]) * (1.0 - pc).ln();
                if pc == p[i] {
                    g[i] = (-y[i] / pc + (1.0 - y[i]) / (1.0 - pc)) / norm;
                }
            }
            // softmax Jacobian per group
            let mut delta = vec![0.0; w];
            for f in 0..layout.n_features() {
                let r = layout.range(f);
                let dot: f64 = r.clone().map(|i| g[i] * p[i]).sum();
                for i in r {
                    delta[i] = p[i] * (g[i] - dot);
                }
            }

            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let a_in = &acts[li];
                let gl = &mut grads[li];
                let rows = gl.weights.chunks_exact_mut(layer.in_dim);
                for ((row, gb), &d) in rows.zip(&mut gl.bias).zip(&delta) {
                    *gb += d;
                    for (gw, a) in row.iter_mut().zip(a_in) {
                        *gw += d * a;
                    }
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.in_dim];
                for (row, &d) in layer.weights.chunks_exact(layer.in_dim).zip(&delta) {
                    for (pv, wv) in prev.iter_mut().zip(row) {
                        *pv += d * wv;
                    }
                }
                for (pv, a) in prev.iter_mut().zip(a_in) {
                    *pv *= 1.0 - a * a;
                }
                delta = prev;
            }
        }
        total / norm
    }

    /// Mean BCE of reconstructing each clean row from itself.
    pub fn reconstruction_loss(&self, matrix: &EncodedMatrix) -> Result<f64, NetError> {
        if matrix.width() != self.shape.input_dim {
            return Err(NetError::LengthMismatch {
                expected: self.shape.input_dim,
                got: matrix.width(),
            });
        }
        if matrix.n_rows() == 0 {
            return Ok(0.0);
        }
        let mut total = 0.0;
        for r in 0..matrix.n_rows() {
            let row = matrix.row(r);
            total += bce_loss(&self.forward(row)?, row)?;
        }
        Ok(total / matrix.n_rows() as f64)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, NetError> {
        let net: Self = serde_json::from_str(text)?;
        net.check()?;
        Ok(net)
    }
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn update(&mut self, net: &mut TrainedAutoencoder, grads: &[Dense], cfg: &TrainingConfig) {
        self.step += 1;
        let c1 = 1.0 - ADAM_BETA1.powi(self.step);
        let c2 = 1.0 - ADAM_BETA2.powi(self.step);
        let lr = cfg.learning_rate;
        let mut k = 0;
        for (layer, grad) in net.layers.iter_mut().zip(grads) {
            let params = layer
                .weights
                .iter_mut()
                .zip(&grad.weights)
                .map(|(p, g)| (p, *g, true))
                .chain(layer.bias.iter_mut().zip(&grad.bias).map(|(p, g)| (p, *g, false)));
            for (p, g, is_weight) in params {
                if is_weight {
                    *p -= lr * cfg.weight_decay * *p;
                }
                self.m[k] = ADAM_BETA1 * self.m[k] + (1.0 - ADAM_BETA1) * g;
                self.v[k] = ADAM_BETA2 * self.v[k] + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = self.m[k] / c1;
                let v_hat = self.v[k] / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
                k += 1;
            }
        }
    }
}

/// Trains a denoising autoencoder on the rows of `matrix`. Deterministic for
/// a fixed `config.seed`.
pub fn train(
    matrix: &EncodedMatrix,
    shape: NetworkShape,
    config: TrainingConfig,
) -> Result<TrainedAutoencoder, NetError> {
    config.validate()?;
    if matrix.n_rows() == 0 {
        return Err(NetError::Shape("training matrix has no rows".into()));
    }
    if matrix.layout() != &shape.layout {
        return Err(NetError::Shape("matrix layout differs from network layout".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = TrainedAutoencoder::initialize_with(shape, config.clone(), &mut rng);
    let noise = if config.noise_factor > 0.0 {
        Some(Normal::new(0.0, config.noise_factor).expect("validated noise factor"))
    } else {
        None
    };
    let mut adam = Adam::new(net.param_count());
    let mut order: Vec<usize> = (0..matrix.n_rows()).collect();
    let mut grads: Vec<Dense> = net
        .layers
        .iter()
        .map(|l| Dense::zeros(l.in_dim, l.out_dim))
        .collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_total = 0.0;
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let noisy: Vec<Vec<f64>> = batch
                .iter()
                .map(|&r| {
                    matrix
                        .row(r)
                        .iter()
                        .map(|&v| match &noise {
                            Some(n) => (v + n.sample(&mut rng)).clamp(0.0, 1.0),
                            None => v,
                        })
                        .collect()
                })
                .collect();
            let inputs: Vec<&[f64]> = noisy.iter().map(Vec::as_slice).collect();
            let targets: Vec<&[f64]> = batch.iter().map(|&r| matrix.row(r)).collect();

            for g in grads.iter_mut() {
                g.weights.iter_mut().for_each(|v| *v = 0.0);
                g.bias.iter_mut().for_each(|v| *v = 0.0);
            }
            let loss = net.accumulate(&inputs, &targets, &mut grads);
            if !loss.is_finite() {
                return Err(NetError::NonFiniteLoss { epoch, batch: b });
            }
            epoch_total += loss * batch.len() as f64;
            adam.update(&mut net, &grads, &config);
        }
        net.epoch_losses.push(epoch_total / matrix.n_rows() as f64);
    }
    net.check()?;
    Ok(net)
}
