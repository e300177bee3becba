//! The compact per-vertex MLP: n_blocks x {linear -> tanh -> batchnorm}
//! with shared weights across vertices, mean pooling over the vertex axis,
//! and a linear -> tanh -> linear regression head.

use ndarray::{Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::layers::{
    activation_backward, activation_forward, batchnorm_backward, batchnorm_forward,
    linear_backward, linear_forward, meanpool_backward, meanpool_forward, Activation,
    BatchNormCache,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub hidden_units: usize,
    pub n_blocks: usize,
    pub out_units: usize,
    pub batchnorm_epsilon: f64,
    pub batchnorm_momentum: f64,
    pub activation: Activation,
}

impl ModelConfig {
    pub fn new(in_channels: usize, out_units: usize) -> ModelConfig {
        ModelConfig {
            in_channels,
            hidden_units: 16,
            n_blocks: 4,
            out_units,
            batchnorm_epsilon: 1e-5,
            batchnorm_momentum: 0.1,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_channels < 1 || self.hidden_units < 1 || self.n_blocks < 1 || self.out_units < 1
        {
            return Err(Error::invalid("model dimensions must all be >= 1"));
        }
        Ok(())
    }
}

/// Closed-form trainable parameter count: weights, biases and the
/// batchnorm gain/shift; running stats excluded.
pub fn param_count(config: &ModelConfig) -> usize {
    let h = config.hidden_units;
    let first = config.in_channels * h + h + 2 * h;
    let rest = (config.n_blocks - 1) * (h * h + h + 2 * h);
    let head = (h * h + h) + (h * config.out_units + config.out_units);
    first + rest + head
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockParams {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub weight1: Array2<f64>,
    pub bias1: Array1<f64>,
    pub weight2: Array2<f64>,
    pub bias2: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub config: ModelConfig,
    pub blocks: Vec<BlockParams>,
    pub head: HeadParams,
}

/// Gradients of all trainable parameters, plus the input gradient.
#[derive(Debug, Clone)]
pub struct ParamGrads {
    pub flat: Vec<f64>,
    pub input: Array3<f64>,
}

pub struct BlockCache {
    input: Array2<f64>,
    activated: Array2<f64>,
    bn: BatchNormCache,
}

/// Every intermediate needed by the reverse pass.
pub struct ForwardCache {
    pub mode: Mode,
    n_subjects: usize,
    n_vertices: usize,
    blocks: Vec<BlockCache>,
    pooled: Array2<f64>,
    head_activated: Array2<f64>,
}

/// Uniform fan-in initialization: weights in [-sqrt(1/fan_in), +sqrt(1/fan_in)],
/// biases zero, gamma 1, beta 0, running mean 0, running variance 1.
pub fn init_model(config: &ModelConfig, seed: u64) -> Result<MlpModel> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = config.hidden_units;
    let mut uniform_weight = |fan_in: usize, fan_out: usize| {
        let bound = (1.0 / fan_in as f64).sqrt();
        Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound))
    };
    let mut blocks = Vec::with_capacity(config.n_blocks);
    for b in 0..config.n_blocks {
        let fan_in = if b == 0 { config.in_channels } else { h };
        blocks.push(BlockParams {
            weight: uniform_weight(fan_in, h),
            bias: Array1::zeros(h),
            gamma: Array1::ones(h),
            beta: Array1::zeros(h),
            running_mean: Array1::zeros(h),
            running_var: Array1::ones(h),
        });
    }
    let head = HeadParams {
        weight1: uniform_weight(h, h),
        bias1: Array1::zeros(h),
        weight2: uniform_weight(h, config.out_units),
        bias2: Array1::zeros(config.out_units),
    };
    Ok(MlpModel {
        config: config.clone(),
        blocks,
        head,
    })
}

impl MlpModel {
    /// Flatten all trainable parameters in the canonical order: per block
    /// weight (row-major), bias, gamma, beta; then head weight1, bias1,
    /// weight2, bias2. Running stats are not trainable and are excluded.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(param_count(&self.config));
        for b in &self.blocks {
            out.extend(b.weight.iter());
            out.extend(b.bias.iter());
            out.extend(b.gamma.iter());
            out.extend(b.beta.iter());
        }
        out.extend(self.head.weight1.iter());
        out.extend(self.head.bias1.iter());
        out.extend(self.head.weight2.iter());
        out.extend(self.head.bias2.iter());
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != param_count(&self.config) {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                param_count(&self.config),
                flat.len()
            )));
        }
        let mut it = flat.iter().copied();
        let fill1 = |a: &mut Array1<f64>, it: &mut dyn Iterator<Item = f64>| {
            for x in a.iter_mut() {
                *x = it.next().unwrap();
            }
        };
        for b in &mut self.blocks {
            for x in b.weight.iter_mut() {
                *x = it.next().unwrap();
            }
            fill1(&mut b.bias, &mut it);
            fill1(&mut b.gamma, &mut it);
            fill1(&mut b.beta, &mut it);
        }
        for x in self.head.weight1.iter_mut() {
            *x = it.next().unwrap();
        }
        fill1(&mut self.head.bias1, &mut it);
        for x in self.head.weight2.iter_mut() {
            *x = it.next().unwrap();
        }
        fill1(&mut self.head.bias2, &mut it);
        Ok(())
    }

    /// Trainable parameter count by enumeration of the stored arrays,
    /// the independent check against `param_count`.
    pub fn enumerate_params(&self) -> usize {
        self.flatten_params().len()
    }

    /// Train-mode forward pass; updates batchnorm running statistics.
    pub fn train_forward(&mut self, inputs: &Array3<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        let (eps, mom, act) = (
            self.config.batchnorm_epsilon,
            self.config.batchnorm_momentum,
            self.config.activation,
        );
        forward_impl(
            &self.config,
            &mut self.blocks,
            &self.head,
            inputs,
            Mode::Train,
            eps,
            mom,
            act,
        )
    }

    /// Eval-mode forward pass; pure, touches no running statistics.
    pub fn eval_forward(&self, inputs: &Array3<f64>) -> Result<(Array2<f64>, ForwardCache)> {
        let mut blocks = self.blocks.clone();
        let (eps, mom, act) = (
            self.config.batchnorm_epsilon,
            self.config.batchnorm_momentum,
            self.config.activation,
        );
        forward_impl(
            &self.config,
            &mut blocks,
            &self.head,
            inputs,
            Mode::Eval,
            eps,
            mom,
            act,
        )
    }

    /// Exact reverse pass of the forward that produced `cache`.
    pub fn backward(&self, cache: &ForwardCache, prediction_grad: &Array2<f64>) -> ParamGrads {
        backward_impl(self, cache, prediction_grad)
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_impl(
    config: &ModelConfig,
    blocks: &mut [BlockParams],
    head: &HeadParams,
    inputs: &Array3<f64>,
    mode: Mode,
    epsilon: f64,
    momentum: f64,
    act: Activation,
) -> Result<(Array2<f64>, ForwardCache)> {
    let (n, v, c) = inputs.dim();
    if c != config.in_channels {
        return Err(Error::invalid(format!(
            "expected {} input channels, got {c}",
            config.in_channels
        )));
    }
    if !inputs.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("model inputs contain non-finite values".into()));
    }
    // Blocks are applied per vertex with shared weights: flatten the
    // subject and vertex axes into rows.
    let mut x = inputs
        .to_shape((n * v, c))
        .expect("contiguous input")
        .to_owned();
    let train = mode == Mode::Train;
    let mut block_caches = Vec::with_capacity(blocks.len());
    for b in blocks.iter_mut() {
        let z = linear_forward(&x, &b.weight, &b.bias)?;
        let a = activation_forward(act, &z);
        let (y, bn) = batchnorm_forward(
            &a,
            &b.gamma,
            &b.beta,
            &mut b.running_mean,
            &mut b.running_var,
            epsilon,
            momentum,
            train,
        )?;
        block_caches.push(BlockCache {
            input: x,
            activated: a,
            bn,
        });
        x = y;
    }
    let h = config.hidden_units;
    let per_vertex = x.to_shape((n, v, h)).expect("contiguous").to_owned();
    let pooled = meanpool_forward(&per_vertex);
    let h1 = linear_forward(&pooled, &head.weight1, &head.bias1)?;
    let t = activation_forward(act, &h1);
    let out = linear_forward(&t, &head.weight2, &head.bias2)?;
    Ok((
        out,
        ForwardCache {
            mode,
            n_subjects: n,
            n_vertices: v,
            blocks: block_caches,
            pooled,
            head_activated: t,
        },
    ))
}

fn backward_impl(model: &MlpModel, cache: &ForwardCache, prediction_grad: &Array2<f64>) -> ParamGrads {
    let act = model.config.activation;
    let (n, v) = (cache.n_subjects, cache.n_vertices);

    // Head, in reverse.
    let (dt, dw2, db2) = linear_backward(&cache.head_activated, &model.head.weight2, prediction_grad);
    let dh1 = activation_backward(act, &cache.head_activated, &dt);
    let (dpooled, dw1, db1) = linear_backward(&cache.pooled, &model.head.weight1, &dh1);

    // Pooling distributes upstream/V to every vertex.
    let dvertex = meanpool_backward(&dpooled, v);
    let h = model.config.hidden_units;
    let mut dx = dvertex
        .to_shape((n * v, h))
        .expect("contiguous")
        .to_owned();

    // Blocks, in reverse.
    let mut block_grads = Vec::with_capacity(model.blocks.len());
    for (b, bc) in model.blocks.iter().zip(cache.blocks.iter()).rev() {
        let (da, dgamma, dbeta) = batchnorm_backward(&bc.bn, &b.gamma, &dx);
        let dz = activation_backward(act, &bc.activated, &da);
        let (dinput, dw, db) = linear_backward(&bc.input, &b.weight, &dz);
        block_grads.push((dw, db, dgamma, dbeta));
        dx = dinput;
    }
    block_grads.reverse();

    let input = dx
        .to_shape((n, v, model.config.in_channels))
        .expect("contiguous")
        .to_owned();

    let mut flat = Vec::with_capacity(param_count(&model.config));
    for (dw, db, dgamma, dbeta) in &block_grads {
        flat.extend(dw.iter());
        flat.extend(db.iter());
        flat.extend(dgamma.iter());
        flat.extend(dbeta.iter());
    }
    flat.extend(dw1.iter());
    flat.extend(db1.iter());
    flat.extend(dw2.iter());
    flat.extend(db2.iter());

    ParamGrads { flat, input }
}
