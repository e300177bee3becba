//! Forward and backward passes for the individual layers. All math is
//! 64-bit with fixed left-to-right reduction order, so results are
//! bit-reproducible across runs.

use ndarray::{Array1, Array2, Array3, Axis};

use crate::error::{Error, Result};

/// y = x W + b, applied row-wise.
pub fn linear_forward(x: &Array2<f64>, weight: &Array2<f64>, bias: &Array1<f64>) -> Result<Array2<f64>> {
    if x.ncols() != weight.nrows() || weight.ncols() != bias.len() {
        return Err(Error::invalid(format!(
            "linear shape mismatch: x {:?}, W {:?}, b {}",
            x.dim(),
            weight.dim(),
            bias.len()
        )));
    }
    let mut y = x.dot(weight);
    y += bias;
    Ok(y)
}

/// Gradients of the linear layer: (dx, dW, db).
pub fn linear_backward(
    x: &Array2<f64>,
    weight: &Array2<f64>,
    upstream: &Array2<f64>,
) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
    let dx = upstream.dot(&weight.t());
    let dw = x.t().dot(upstream);
    let db = upstream.sum_axis(Axis(0));
    (dx, dw, db)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    /// Pass-through, used by attribution tests where the exact Shapley
    /// oracle needs a linear network.
    Identity,
}

pub fn activation_forward(act: Activation, x: &Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Tanh => x.mapv(f64::tanh),
        Activation::Identity => x.clone(),
    }
}

/// Backward through the activation given its own output `y`.
pub fn activation_backward(act: Activation, y: &Array2<f64>, upstream: &Array2<f64>) -> Array2<f64> {
    match act {
        Activation::Tanh => upstream * &y.mapv(|t| 1.0 - t * t),
        Activation::Identity => upstream.clone(),
    }
}

/// Cache of a train-mode batchnorm forward, needed for the exact backward.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Array2<f64>,
    pub inv_std: Array1<f64>,
    pub train_mode: bool,
}

/// Batch normalization over rows (the combined batch x vertex axis), one
/// statistic per channel. Train mode uses biased batch variance and updates
/// the running stats in place; eval mode is a pure affine map from the
/// running stats.
#[allow(clippy::too_many_arguments)]
pub fn batchnorm_forward(
    x: &Array2<f64>,
    gamma: &Array1<f64>,
    beta: &Array1<f64>,
    running_mean: &mut Array1<f64>,
    running_var: &mut Array1<f64>,
    epsilon: f64,
    momentum: f64,
    train_mode: bool,
) -> Result<(Array2<f64>, BatchNormCache)> {
    let m = x.nrows();
    if train_mode && m < 2 {
        return Err(Error::invalid(
            "batchnorm train mode requires at least 2 rows",
        ));
    }
    let (mean, var) = if train_mode {
        let mean = x.mean_axis(Axis(0)).expect("non-empty");
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).mean_axis(Axis(0)).expect("non-empty");
        for c in 0..running_mean.len() {
            running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * mean[c];
            running_var[c] = (1.0 - momentum) * running_var[c] + momentum * var[c];
        }
        (mean, var)
    } else {
        (running_mean.clone(), running_var.clone())
    };
    let inv_std = var.mapv(|v| 1.0 / (v + epsilon).sqrt());
    let normalized = (x - &mean) * &inv_std;
    let y = &normalized * gamma + beta;
    Ok((
        y,
        BatchNormCache {
            normalized,
            inv_std,
            train_mode,
        },
    ))
}

/// Full train-mode batchnorm gradient, including the dependence of the
/// batch mean and variance on the input. In eval mode the layer is affine
/// and the input gradient is just the slope.
pub fn batchnorm_backward(
    cache: &BatchNormCache,
    gamma: &Array1<f64>,
    upstream: &Array2<f64>,
) -> (Array2<f64>, Array1<f64>, Array1<f64>) {
    let dbeta = upstream.sum_axis(Axis(0));
    let dgamma = (upstream * &cache.normalized).sum_axis(Axis(0));
    let dx = if cache.train_mode {
        let m = upstream.nrows() as f64;
        let mut dx = upstream * m;
        dx -= &dbeta;
        dx -= &(&cache.normalized * &dgamma);
        dx *= &(gamma * &cache.inv_std / m);
        dx
    } else {
        upstream * &(gamma * &cache.inv_std)
    };
    (dx, dgamma, dbeta)
}

/// Mean over the vertex axis of an (N, V, C) tensor, left-to-right order.
pub fn meanpool_forward(x: &Array3<f64>) -> Array2<f64> {
    let (n, v, c) = x.dim();
    let mut out = Array2::zeros((n, c));
    for i in 0..n {
        for j in 0..v {
            for k in 0..c {
                out[[i, k]] += x[[i, j, k]];
            }
        }
    }
    out / v as f64
}

/// Distributes upstream/V back to every vertex.
pub fn meanpool_backward(upstream: &Array2<f64>, n_vertices: usize) -> Array3<f64> {
    let (n, c) = upstream.dim();
    let scale = 1.0 / n_vertices as f64;
    Array3::from_shape_fn((n, n_vertices, c), |(i, _, k)| upstream[[i, k]] * scale)
}
