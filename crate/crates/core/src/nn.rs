//! Dense perceptrons with hand-written backpropagation and the Adam optimizer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binfmt::round_to_f32;
use crate::error::{check_len, Error, Result};
use crate::rng::{normal, substream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OutputActivation {
    Linear,
    Sigmoid,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected network with `tanh` hidden units.
///
/// Parameters live in one flat vector: for each layer the row-major weight
/// matrix `out x in` followed by the bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    sizes: Vec<usize>,
    output: OutputActivation,
    params: Vec<f64>,
}

pub struct MlpCache {
    /// Input followed by the post-activation output of every layer.
    acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().expect("non-empty cache")
    }
}

impl Mlp {
    pub fn zeros(sizes: &[usize], output: OutputActivation) -> Self {
        assert!(
            sizes.len() >= 2,
            "an MLP needs at least input and output sizes"
        );
        let n = Self::count(sizes);
        Self {
            sizes: sizes.to_vec(),
            output,
            params: vec![0.0; n],
        }
    }

    /// Scaled normal initialization (std = gain / sqrt(fan_in)), zero biases.
    pub fn init(sizes: &[usize], output: OutputActivation, seed: u64, gain: f64) -> Self {
        let mut mlp = Self::zeros(sizes, output);
        let mut rng = substream(seed, 0x6d6c70);
        let mut off = 0;
        for l in 0..sizes.len() - 1 {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let std = gain / (fan_in as f64).sqrt();
            for p in &mut mlp.params[off..off + fan_in * fan_out] {
                *p = std * normal(&mut rng);
            }
            off += fan_in * fan_out + fan_out;
        }
        round_to_f32(&mut mlp.params);
        mlp
    }

    pub fn from_parts(
        sizes: Vec<usize>,
        output: OutputActivation,
        params: Vec<f64>,
    ) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(Error::invalid("bad MLP layer sizes"));
        }
        check_len("mlp parameters", Self::count(&sizes), params.len())?;
        Ok(Self {
            sizes,
            output,
            params,
        })
    }

    fn count(sizes: &[usize]) -> usize {
        sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_len(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_len(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Zeroes the last layer so the pre-activation output is exactly zero.
    pub fn zero_output_layer(&mut self) {
        let n = self.sizes.len();
        let last = self.sizes[n - 2] * self.sizes[n - 1] + self.sizes[n - 1];
        let len = self.params.len();
        self.params[len - last..].fill(0.0);
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_cached(x).acts.pop().unwrap()
    }

    pub fn forward_cached(&self, x: &[f64]) -> MlpCache {
        debug_assert_eq!(x.len(), self.sizes[0]);
        let layers = self.sizes.len() - 1;
        let mut acts = Vec::with_capacity(layers + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in 0..layers {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            let w = &self.params[off..off + n_in * n_out];
            let b = &self.params[off + n_in * n_out..off + n_in * n_out + n_out];
            let input = &acts[l];
            let mut out = Vec::with_capacity(n_out);
            for (row, bias) in w.chunks_exact(n_in).zip(b) {
                let z = bias + dot(row, input);
                out.push(z);
            }
            if l + 1 < layers {
                out.iter_mut().for_each(|v| *v = v.tanh());
            } else if self.output == OutputActivation::Sigmoid {
                out.iter_mut().for_each(|v| *v = sigmoid(*v));
            }
            acts.push(out);
            off += n_in * n_out + n_out;
        }
        MlpCache { acts }
    }

    /// Accumulates parameter gradients into `grad` given the gradient with
    /// respect to the (post-activation) output; returns the input gradient.
    pub fn backward(&self, cache: &MlpCache, grad_out: &[f64], grad: &mut [f64]) -> Vec<f64> {
        let layers = self.sizes.len() - 1;
        let mut delta: Vec<f64> = match self.output {
            OutputActivation::Linear => grad_out.to_vec(),
            OutputActivation::Sigmoid => grad_out
                .iter()
                .zip(cache.output())
                .map(|(g, y)| g * y * (1.0 - y))
                .collect(),
        };
        let mut off = self.params.len();
        for l in (0..layers).rev() {
            let (n_in, n_out) = (self.sizes[l], self.sizes[l + 1]);
            off -= n_in * n_out + n_out;
            let w = &self.params[off..off + n_in * n_out];
            let input = &cache.acts[l];
            let (gw, gb) = grad[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
            let mut d_in = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &w[o * n_in..(o + 1) * n_in];
                let grow = &mut gw[o * n_in..(o + 1) * n_in];
                for i in 0..n_in {
                    grow[i] += d * input[i];
                    d_in[i] += d * row[i];
                }
            }
            if l > 0 {
                for (d, a) in d_in.iter_mut().zip(input) {
                    *d *= 1.0 - a * a;
                }
            }
            delta = d_in;
        }
        delta
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    // four independent partial sums let the compiler vectorize
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Shared optimizer settings for every trainable component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub iterations: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    /// Learning rate at the last iteration relative to the first; the rate
    /// follows a half cosine in between. `1.0` keeps it constant.
    #[serde(default = "one")]
    pub final_lr_fraction: f64,
}

fn one() -> f64 {
    1.0
}

impl TrainConfig {
    /// Flow-mapper hyperparameters used for the full-size experiments.
    pub const FULL_SCALE_MAPPER: TrainConfig = TrainConfig {
        iterations: 80_000,
        batch_size: 50,
        learning_rate: 1e-3,
        seed: 0,
        beta1: 0.9,
        beta2: 0.999,
        final_lr_fraction: 1.0,
    };

    /// Desk-scale default: same batch and rate, far fewer iterations with
    /// the rate decayed to 5% by the end.
    pub fn desk_mapper(seed: u64) -> Self {
        Self {
            iterations: 2500,
            seed,
            final_lr_fraction: 0.05,
            ..Self::FULL_SCALE_MAPPER
        }
    }

    pub fn new(iterations: usize, batch_size: usize, learning_rate: f64, seed: u64) -> Self {
        Self {
            iterations,
            batch_size,
            learning_rate,
            seed,
            beta1: 0.9,
            beta2: 0.999,
            final_lr_fraction: 1.0,
        }
    }

    pub fn with_cosine_decay(mut self, final_fraction: f64) -> Self {
        self.final_lr_fraction = final_fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.beta1 > 0.0
            && self.beta2 > 0.0
            && self.final_lr_fraction > 0.0
            && self.final_lr_fraction <= 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!("bad training config {self:?}")))
        }
    }

    pub fn sample_batch(&self, rng: &mut impl Rng, n: usize) -> Vec<usize> {
        (0..self.batch_size)
            .map(|_| rng.random_range(0..n))
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    final_fraction: f64,
    horizon: usize,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            final_fraction: cfg.final_lr_fraction,
            horizon: cfg.iterations,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let lr = if self.final_fraction < 1.0 && self.horizon > 1 {
            let progress = ((self.t - 1) as f64 / (self.horizon - 1) as f64).min(1.0);
            let f = self.final_fraction;
            self.lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
        } else {
            self.lr
        };
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Minibatch mean-squared-error regression with Adam. Returns the loss curve.
pub fn fit_mse(
    mlp: &mut Mlp,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_len("regression targets", inputs.len(), targets.len())?;
    let mut rng = substream(cfg.seed, 0x0066_6974);
    let mut adam = Adam::new(mlp.params.len(), cfg);
    let mut grad = vec![0.0; mlp.params.len()];
    let mut losses = Vec::with_capacity(cfg.iterations);
    let n_out = mlp.output_len() as f64;
    for it in 0..cfg.iterations {
        grad.fill(0.0);
        let batch = cfg.sample_batch(&mut rng, inputs.len());
        let scale = 1.0 / (batch.len() as f64 * n_out);
        let mut loss = 0.0;
        for &i in &batch {
            let cache = mlp.forward_cached(&inputs[i]);
            let g: Vec<f64> = cache
                .output()
                .iter()
                .zip(&targets[i])
                .map(|(y, t)| {
                    loss += (y - t) * (y - t) * scale;
                    2.0 * (y - t) * scale
                })
                .collect();
            mlp.backward(&cache, &g, &mut grad);
        }
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it });
        }
        losses.push(loss);
        adam.step(&mut mlp.params, &grad);
    }
    if cfg.iterations > 0 {
        round_to_f32(&mut mlp.params);
    }
    Ok(losses)
}
