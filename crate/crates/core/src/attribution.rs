//! Model explanation: DeepLIFT-rescale attributions, integrated gradients
//! as an independent cross-check, an exact Shapley brute-force oracle for
//! tiny inputs, and preterm/term group-map generation.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use serde::Serialize;

use crate::autonet::{layers::Activation, MlpModel};
use crate::dataio::{Dataset, Split, PRETERM_THRESHOLD_WEEKS};
use crate::error::{Error, Result};

/// Below this |x - r| the rescale ratio switches to the analytic
/// derivative to avoid 0/0.
const RESCALE_DELTA_GUARD: f64 = 1e-7;

const MAX_SHAPLEY_CELLS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    DeepliftRescale,
    IntegratedGradients,
    ExactShapley,
}

/// Per-vertex, per-channel contribution to one model output, relative to a
/// background reference.
#[derive(Debug, Clone)]
pub struct Attribution {
    pub method: Method,
    /// Shape (n_vertices, n_channels), in model input layout.
    pub values: Array2<f64>,
    pub output_index: usize,
    pub background_n: usize,
    /// Worst |sum(values) - (f(x) - reference output)| over backgrounds.
    pub completeness_residual: f64,
}

impl Attribution {
    /// Rescale into natural output units (weeks per feature).
    pub fn scaled(mut self, output_scale: f64) -> Attribution {
        self.values.mapv_inplace(|v| v * output_scale);
        self.completeness_residual *= output_scale.abs();
        self
    }
}

/// Pre-activations and output of an eval-mode forward for one subject.
struct EvalTrace {
    block_pre: Vec<Array2<f64>>,
    head_pre: Array1<f64>,
    output: Array1<f64>,
}

fn act(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => z.tanh(),
        Activation::Identity => z,
    }
}

fn act_deriv(a: Activation, z: f64) -> f64 {
    match a {
        Activation::Tanh => {
            let t = z.tanh();
            1.0 - t * t
        }
        Activation::Identity => 1.0,
    }
}

/// Eval-mode batchnorm is affine; its slope per unit.
fn bn_slope(model: &MlpModel, block: usize) -> Array1<f64> {
    let b = &model.blocks[block];
    let eps = model.config.batchnorm_epsilon;
    Array1::from_shape_fn(b.gamma.len(), |i| {
        b.gamma[i] / (b.running_var[i] + eps).sqrt()
    })
}

fn eval_trace(model: &MlpModel, input: &Array2<f64>) -> EvalTrace {
    let activation = model.config.activation;
    let mut x = input.clone();
    let mut block_pre = Vec::with_capacity(model.blocks.len());
    for (bi, b) in model.blocks.iter().enumerate() {
        let mut z = x.dot(&b.weight);
        z += &b.bias;
        let slope = bn_slope(model, bi);
        let y = Array2::from_shape_fn(z.dim(), |(i, j)| {
            (act(activation, z[[i, j]]) - b.running_mean[j]) * slope[j] + b.beta[j]
        });
        block_pre.push(z);
        x = y;
    }
    let v = input.nrows() as f64;
    let pooled = x.sum_axis(ndarray::Axis(0)) / v;
    let mut z1 = pooled.dot(&model.head.weight1);
    z1 += &model.head.bias1;
    let t = z1.mapv(|z| act(activation, z));
    let mut out = t.dot(&model.head.weight2);
    out += &model.head.bias2;
    EvalTrace {
        block_pre,
        head_pre: z1,
        output: out,
    }
}

fn rescale_factor(a: Activation, zx: f64, zr: f64) -> f64 {
    if (zx - zr).abs() < RESCALE_DELTA_GUARD {
        act_deriv(a, zx)
    } else {
        (act(a, zx) - act(a, zr)) / (zx - zr)
    }
}

fn check_input(model: &MlpModel, input: &Array2<f64>) -> Result<()> {
    if input.ncols() != model.config.in_channels {
        return Err(Error::invalid(format!(
            "input has {} channels, model expects {}",
            input.ncols(),
            model.config.in_channels
        )));
    }
    Ok(())
}

/// DeepLIFT rescale-rule attributions averaged over a set of background
/// references. Linear layers propagate multipliers through their weights,
/// the elementwise activation uses the rescale ratio, eval-mode batchnorm
/// contributes its affine slope, and mean-pooling distributes 1/V.
pub fn deeplift_rescale(
    model: &MlpModel,
    input: &Array2<f64>,
    backgrounds: &[Array2<f64>],
    output_index: usize,
) -> Result<Attribution> {
    check_input(model, input)?;
    if backgrounds.is_empty() {
        return Err(Error::invalid("deeplift needs at least one background"));
    }
    if output_index >= model.config.out_units {
        return Err(Error::invalid("output index out of range"));
    }
    let activation = model.config.activation;
    let (v, c) = input.dim();
    let x_trace = eval_trace(model, input);

    let mut total = Array2::zeros((v, c));
    let mut worst_residual = 0.0f64;

    for r in backgrounds {
        if r.dim() != input.dim() {
            return Err(Error::invalid("background shape differs from input"));
        }
        let r_trace = eval_trace(model, r);

        // Head, in reverse: multiplier on the pooled vector.
        let mut m_head: Array1<f64> =
            model.head.weight2.column(output_index).to_owned();
        for j in 0..m_head.len() {
            m_head[j] *= rescale_factor(activation, x_trace.head_pre[j], r_trace.head_pre[j]);
        }
        let m_pooled = model.head.weight1.dot(&m_head);

        // Pooling distributes 1/V to every vertex.
        let mut m = Array2::from_shape_fn((v, m_pooled.len()), |(_, j)| m_pooled[j] / v as f64);

        // Blocks, in reverse.
        for (bi, b) in model.blocks.iter().enumerate().rev() {
            let slope = bn_slope(model, bi);
            for i in 0..v {
                for j in 0..m.ncols() {
                    let f = rescale_factor(
                        activation,
                        x_trace.block_pre[bi][[i, j]],
                        r_trace.block_pre[bi][[i, j]],
                    );
                    m[[i, j]] *= slope[j] * f;
                }
            }
            m = m.dot(&b.weight.t());
        }

        let mut sum = 0.0;
        for i in 0..v {
            for j in 0..c {
                let contrib = m[[i, j]] * (input[[i, j]] - r[[i, j]]);
                total[[i, j]] += contrib;
                sum += contrib;
            }
        }
        let delta_f = x_trace.output[output_index] - r_trace.output[output_index];
        worst_residual = worst_residual.max((sum - delta_f).abs());
    }

    let n = backgrounds.len() as f64;
    Ok(Attribution {
        method: Method::DeepliftRescale,
        values: total / n,
        output_index,
        background_n: backgrounds.len(),
        completeness_residual: worst_residual,
    })
}

/// Midpoint-rule integrated gradients using the exact input gradients of
/// the eval-mode network.
pub fn integrated_gradients(
    model: &MlpModel,
    input: &Array2<f64>,
    baseline: &Array2<f64>,
    steps: usize,
    output_index: usize,
) -> Result<Attribution> {
    check_input(model, input)?;
    if steps < 1 {
        return Err(Error::invalid("steps must be >= 1"));
    }
    if baseline.dim() != input.dim() {
        return Err(Error::invalid("baseline shape differs from input"));
    }
    if output_index >= model.config.out_units {
        return Err(Error::invalid("output index out of range"));
    }
    let (v, c) = input.dim();
    let delta = input - baseline;
    let mut grad_sum: Array2<f64> = Array2::zeros((v, c));
    for step in 1..=steps {
        let alpha = (step as f64 - 0.5) / steps as f64;
        let point = baseline + &(&delta * alpha);
        let point3 = point
            .into_shape_with_order((1, v, c))
            .expect("contiguous");
        let (pred, cache) = model.eval_forward(&point3)?;
        let mut upstream = Array2::zeros(pred.dim());
        upstream[[0, output_index]] = 1.0;
        let grads = model.backward(&cache, &upstream);
        let g = grads
            .input
            .into_shape_with_order((v, c))
            .expect("contiguous");
        grad_sum += &g;
    }
    let values = &delta * &(grad_sum / steps as f64);

    let f_x = single_output(model, input, output_index)?;
    let f_b = single_output(model, baseline, output_index)?;
    let residual = (values.sum() - (f_x - f_b)).abs();
    Ok(Attribution {
        method: Method::IntegratedGradients,
        values,
        output_index,
        background_n: 1,
        completeness_residual: residual,
    })
}

fn single_output(model: &MlpModel, input: &Array2<f64>, output_index: usize) -> Result<f64> {
    let (v, c) = input.dim();
    let x3 = input
        .clone()
        .into_shape_with_order((1, v, c))
        .expect("contiguous");
    let (pred, _) = model.eval_forward(&x3)?;
    Ok(pred[[0, output_index]])
}

/// Exact Shapley values by coalition enumeration. Each cell of the input
/// is a player; absent players take the baseline value.
pub fn exact_shapley(
    model: &MlpModel,
    input: &Array2<f64>,
    baseline: &Array2<f64>,
    output_index: usize,
) -> Result<Attribution> {
    check_input(model, input)?;
    if baseline.dim() != input.dim() {
        return Err(Error::invalid("baseline shape differs from input"));
    }
    let (v, c) = input.dim();
    let n_cells = v * c;
    if n_cells > MAX_SHAPLEY_CELLS {
        return Err(Error::invalid(format!(
            "{n_cells} input cells exceed the exact-Shapley limit of {MAX_SHAPLEY_CELLS}"
        )));
    }
    if output_index >= model.config.out_units {
        return Err(Error::invalid("output index out of range"));
    }

    // f over every coalition, indexed by bitmask.
    let mut coalition_value = vec![0.0f64; 1 << n_cells];
    for mask in 0..(1usize << n_cells) {
        let mut point = baseline.clone();
        for cell in 0..n_cells {
            if mask & (1 << cell) != 0 {
                point[[cell / c, cell % c]] = input[[cell / c, cell % c]];
            }
        }
        coalition_value[mask] = single_output(model, &point, output_index)?;
    }

    let mut factorial = vec![1.0f64; n_cells + 1];
    for i in 1..=n_cells {
        factorial[i] = factorial[i - 1] * i as f64;
    }
    // weight(|S|) = |S|! (n - |S| - 1)! / n!
    let weight: Vec<f64> = (0..n_cells)
        .map(|s| factorial[s] * factorial[n_cells - s - 1] / factorial[n_cells])
        .collect();

    let mut values = Array2::zeros((v, c));
    for cell in 0..n_cells {
        let bit = 1usize << cell;
        let mut phi = 0.0;
        for mask in 0..(1usize << n_cells) {
            if mask & bit != 0 {
                continue;
            }
            let s = mask.count_ones() as usize;
            phi += weight[s] * (coalition_value[mask | bit] - coalition_value[mask]);
        }
        values[[cell / c, cell % c]] = phi;
    }

    let residual = (values.sum()
        - (coalition_value[(1 << n_cells) - 1] - coalition_value[0]))
        .abs();
    Ok(Attribution {
        method: Method::ExactShapley,
        values,
        output_index,
        background_n: 1,
        completeness_residual: residual,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    Preterm,
    Term,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    MeanFeature,
    MeanAttribution,
    MeanAbsAttribution,
}

#[derive(Debug, Clone)]
pub struct GroupMap {
    pub group: Group,
    pub statistic: Statistic,
    pub channel: String,
    pub values: Vec<f64>,
}

fn subject_group(meta: &crate::dataio::SubjectMeta) -> Option<Group> {
    let ga = meta.ga_birth?;
    if ga < PRETERM_THRESHOLD_WEEKS {
        Some(Group::Preterm)
    } else if ga > PRETERM_THRESHOLD_WEEKS {
        Some(Group::Term)
    } else {
        None
    }
}

/// Per-vertex group averages over the validation and test subjects:
/// the raw value of `channel` per group, and the signed and absolute
/// attribution means per group and channel. `attributions` maps dataset
/// subject indices to per-subject attributions; channels beyond the
/// dataset's feature channels (the confound column of the birth-age task)
/// are ignored.
pub fn group_maps(
    dataset: &Dataset,
    channel: &str,
    attributions: &BTreeMap<usize, Attribution>,
) -> Result<Vec<GroupMap>> {
    let channel_ix = dataset
        .channel_names
        .iter()
        .position(|c| c == channel)
        .ok_or_else(|| Error::Schema(format!("unknown channel {channel}")))?;
    let n_vertices = dataset.expected_vertices();
    let n_channels = dataset.channel_names.len();

    let mut out = Vec::new();
    for group in [Group::Preterm, Group::Term] {
        let members: Vec<usize> = dataset
            .subjects
            .iter()
            .enumerate()
            .filter(|(_, (m, _))| {
                matches!(m.split, Split::Val | Split::Test) && subject_group(m) == Some(group)
            })
            .map(|(i, _)| i)
            .collect();
        if members.is_empty() {
            // Empty groups are simply absent from the output.
            continue;
        }

        let mut feature_mean = vec![0.0f64; n_vertices];
        for &i in &members {
            let f = &dataset.subjects[i].1;
            for v in 0..n_vertices {
                feature_mean[v] += f.values[[channel_ix, v]];
            }
        }
        for v in feature_mean.iter_mut() {
            *v /= members.len() as f64;
        }
        out.push(GroupMap {
            group,
            statistic: Statistic::MeanFeature,
            channel: channel.to_string(),
            values: feature_mean,
        });

        let attributed: Vec<usize> = members
            .iter()
            .copied()
            .filter(|i| attributions.contains_key(i))
            .collect();
        if attributed.is_empty() {
            continue;
        }
        for ch in 0..n_channels {
            let mut signed = vec![0.0f64; n_vertices];
            let mut absolute = vec![0.0f64; n_vertices];
            for &i in &attributed {
                let a = &attributions[&i];
                for v in 0..n_vertices {
                    signed[v] += a.values[[v, ch]];
                    absolute[v] += a.values[[v, ch]].abs();
                }
            }
            for v in 0..n_vertices {
                signed[v] /= attributed.len() as f64;
                absolute[v] /= attributed.len() as f64;
            }
            out.push(GroupMap {
                group,
                statistic: Statistic::MeanAttribution,
                channel: dataset.channel_names[ch].clone(),
                values: signed,
            });
            out.push(GroupMap {
                group,
                statistic: Statistic::MeanAbsAttribution,
                channel: dataset.channel_names[ch].clone(),
                values: absolute,
            });
        }
    }
    Ok(out)
}
