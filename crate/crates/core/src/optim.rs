//! Loss functions, the Adam optimizer, task input construction, and the
//! training loop with patience-based early stopping and best-model
//! restoration.

use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autonet::MlpModel;
use crate::dataio::{Dataset, Split, StandardizationStats};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub patience: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Per-output loss weights; length must match the head's out_units.
    pub target_weights: Vec<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            batch_size: 32,
            patience: 200,
            max_epochs: 20_000,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            target_weights: vec![1.0],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::invalid("learning_rate must be > 0"));
        }
        if self.batch_size < 1 || self.patience < 1 {
            return Err(Error::invalid("batch_size and patience must be >= 1"));
        }
        if self.target_weights.iter().any(|&w| w < 0.0)
            || self.target_weights.iter().all(|&w| w == 0.0)
        {
            return Err(Error::invalid(
                "target_weights must be non-negative and not all zero",
            ));
        }
        Ok(())
    }
}

/// Weighted MSE: loss = sum_k w_k * mean_n (pred - target)^2, with its
/// gradient 2 * w_k * (pred - target) / N.
pub fn mse_loss(
    predictions: &Array2<f64>,
    targets: &Array2<f64>,
    target_weights: &[f64],
) -> Result<(f64, Array2<f64>)> {
    if predictions.dim() != targets.dim() || predictions.ncols() != target_weights.len() {
        return Err(Error::invalid(format!(
            "mse shape mismatch: pred {:?}, target {:?}, weights {}",
            predictions.dim(),
            targets.dim(),
            target_weights.len()
        )));
    }
    let n = predictions.nrows() as f64;
    let diff = predictions - targets;
    let mut loss = 0.0;
    for (k, &w) in target_weights.iter().enumerate() {
        let mut acc = 0.0;
        for i in 0..predictions.nrows() {
            acc += diff[[i, k]] * diff[[i, k]];
        }
        loss += w * acc / n;
    }
    let mut grad = diff;
    for (k, &w) in target_weights.iter().enumerate() {
        for i in 0..grad.nrows() {
            grad[[i, k]] *= 2.0 * w / n;
        }
    }
    Ok((loss, grad))
}

/// Adam first/second moment accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n_params: usize) -> AdamState {
        AdamState {
            first_moment: vec![0.0; n_params],
            second_moment: vec![0.0; n_params],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update, in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &TrainConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::invalid("adam shape mismatch"));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("non-finite gradient in Adam step".into()));
    }
    state.step += 1;
    let t = state.step as i32;
    let bias1 = 1.0 - config.beta1.powi(t);
    let bias2 = 1.0 - config.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.first_moment[i] = config.beta1 * state.first_moment[i] + (1.0 - config.beta1) * g;
        state.second_moment[i] =
            config.beta2 * state.second_moment[i] + (1.0 - config.beta2) * g * g;
        let m_hat = state.first_moment[i] / bias1;
        let v_hat = state.second_moment[i] / bias2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    ScanAge,
    BirthAge,
    /// Three-output head predicting GA at birth, PMA at scan, and
    /// birthweight jointly, all three in the loss.
    Challenge,
}

impl Task {
    pub fn in_channels(&self, n_feature_channels: usize) -> usize {
        match self {
            Task::BirthAge => n_feature_channels + 1,
            _ => n_feature_channels,
        }
    }

    pub fn out_units(&self) -> usize {
        match self {
            Task::Challenge => 3,
            _ => 1,
        }
    }

    pub fn target_names(&self) -> Vec<&'static str> {
        match self {
            Task::ScanAge => vec!["pma_scan"],
            Task::BirthAge => vec!["ga_birth"],
            Task::Challenge => vec!["ga_birth", "pma_scan", "birthweight"],
        }
    }
}

/// Standardized inputs and targets for one split.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array3<f64>,
    pub targets: Array2<f64>,
    /// Dataset indices of the rows, in order.
    pub subject_indices: Vec<usize>,
}

/// Assemble standardized model inputs for one split of the dataset.
///
/// scan_age: 4 standardized channels, target = standardized pma_scan.
/// birth_age: a 5th channel carries the subject's standardized pma_scan
/// broadcast to every vertex; target = standardized ga_birth.
/// challenge: 4 channels, 3 standardized targets; subjects missing any
/// target are dropped rather than rejected.
pub fn build_split_inputs(
    dataset: &Dataset,
    task: Task,
    stats: &StandardizationStats,
    split: Split,
) -> Result<Batch> {
    let indices = dataset.split_indices(split);
    build_inputs_for(dataset, task, stats, &indices, matches!(task, Task::Challenge))
}

pub fn build_inputs_for(
    dataset: &Dataset,
    task: Task,
    stats: &StandardizationStats,
    indices: &[usize],
    drop_incomplete: bool,
) -> Result<Batch> {
    let target_names = task.target_names();
    let mut missing = Vec::new();
    let mut rows = Vec::new();
    for &i in indices {
        let meta = &dataset.subjects[i].0;
        let complete = target_names.iter().all(|t| target_value(meta, t).is_some())
            && (task != Task::BirthAge || meta.pma_scan.is_some());
        if complete {
            rows.push(i);
        } else if drop_incomplete {
            continue;
        } else {
            missing.push(meta.subject_id.clone());
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingMetadata(missing));
    }

    let n = rows.len();
    let v = dataset.expected_vertices();
    let n_channels = dataset.channel_names.len();
    let in_channels = task.in_channels(n_channels);
    let k = task.out_units();
    let mut inputs = Array3::zeros((n, v, in_channels));
    let mut targets = Array2::zeros((n, k));

    for (row, &i) in rows.iter().enumerate() {
        let (meta, field) = &dataset.subjects[i];
        for c in 0..n_channels {
            let (mean, std) = stats.channel(&dataset.channel_names[c])?;
            for j in 0..v {
                inputs[[row, j, c]] = (field.values[[c, j]] - mean) / std;
            }
        }
        if task == Task::BirthAge {
            let pma_stats = stats.target("pma_scan")?;
            let z = pma_stats.standardize(meta.pma_scan.expect("checked above"));
            for j in 0..v {
                inputs[[row, j, n_channels]] = z;
            }
        }
        for (col, name) in target_names.iter().enumerate() {
            let t_stats = stats.target(name)?;
            if t_stats.std < 1e-12 {
                return Err(Error::Schema(format!("degenerate target {name}")));
            }
            targets[[row, col]] =
                t_stats.standardize(target_value(meta, name).expect("checked above"));
        }
    }
    Ok(Batch {
        inputs,
        targets,
        subject_indices: rows,
    })
}

fn target_value(meta: &crate::dataio::SubjectMeta, name: &str) -> Option<f64> {
    match name {
        "ga_birth" => meta.ga_birth,
        "pma_scan" => meta.pma_scan,
        "birthweight" => meta.birthweight,
        _ => None,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub wall_ms: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_epoch: usize,
    pub seed: u64,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,wall_ms\n");
        for r in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{}\n",
                r.epoch, r.train_loss, r.val_loss, r.wall_ms
            ));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::json!({
            "best_epoch": self.best_epoch,
            "best_val_loss": self.best_val_loss,
            "stopped_epoch": self.stopped_epoch,
            "seed": self.seed,
        })
        .to_string()
    }
}

/// Train with mini-batch Adam and patience-based early stopping. Stops when
/// the validation loss has not set a new strict minimum for `patience`
/// consecutive epochs, and returns the model snapshot (parameters and
/// running stats) from the best-validation epoch.
pub fn train(
    mut model: MlpModel,
    train_batch: &Batch,
    val_batch: &Batch,
    config: &TrainConfig,
) -> Result<(MlpModel, TrainLog)> {
    config.validate()?;
    let n = train_batch.inputs.dim().0;
    if n == 0 || val_batch.inputs.dim().0 == 0 {
        return Err(Error::invalid("train and val splits must be non-empty"));
    }
    if config.target_weights.len() != model.config.out_units {
        return Err(Error::invalid(format!(
            "{} target weights for a {}-output head",
            config.target_weights.len(),
            model.config.out_units
        )));
    }

    let mut params = model.flatten_params();
    let mut adam = AdamState::new(params.len());
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let started = Instant::now();

    let mut best: Option<(usize, f64, MlpModel)> = None;
    let mut epochs = Vec::new();
    let mut epochs_since_best = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let batches = batch_ranges(n, config.batch_size);

        let mut train_loss_acc = 0.0;
        let mut train_rows = 0usize;
        for range in &batches {
            let rows = &order[range.clone()];
            let inputs = select_rows3(&train_batch.inputs, rows);
            let targets = select_rows2(&train_batch.targets, rows);
            model.set_params(&params)?;
            let (pred, cache) = model.train_forward(&inputs)?;
            let (loss, grad) = mse_loss(&pred, &targets, &config.target_weights)?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            train_loss_acc += loss * rows.len() as f64;
            train_rows += rows.len();
            let grads = model.backward(&cache, &grad);
            // Running stats were updated by the forward; re-sync before the
            // parameter write-back below.
            adam_step(&mut params, &grads.flat, &mut adam, config)
                .map_err(|e| match e {
                    Error::NonFinite(_) => {
                        Error::NonFinite(format!("non-finite gradient at epoch {epoch}"))
                    }
                    other => other,
                })?;
        }
        model.set_params(&params)?;
        let train_loss = train_loss_acc / train_rows as f64;

        let (val_pred, _) = model.eval_forward(&val_batch.inputs)?;
        let (val_loss, _) = mse_loss(&val_pred, &val_batch.targets, &config.target_weights)?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!(
                "non-finite validation loss at epoch {epoch}"
            )));
        }

        epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            wall_ms: started.elapsed().as_secs_f64() * 1000.0,
        });

        // Strict improvement of the running minimum; ties do not reset
        // patience.
        let improved = best.as_ref().map_or(true, |(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, model.clone()));
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
        }
        stopped_epoch = epoch;
        if epochs_since_best >= config.patience {
            break;
        }
    }

    let (best_epoch, best_val_loss, best_model) = best.expect("at least one epoch ran");
    Ok((
        best_model,
        TrainLog {
            epochs,
            best_epoch,
            best_val_loss,
            stopped_epoch,
            seed: config.seed,
        },
    ))
}

/// Mini-batch index ranges. The final partial batch is kept; a trailing
/// singleton is merged into the previous batch because train-mode batchnorm
/// needs at least 2 rows.
fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + batch_size).min(n);
        out.push(start..end);
        start = end;
    }
    if out.len() >= 2 {
        let last = out.last().unwrap().clone();
        if last.len() == 1 {
            out.pop();
            let prev = out.pop().unwrap();
            out.push(prev.start..last.end);
        }
    }
    out
}

fn select_rows3(x: &Array3<f64>, rows: &[usize]) -> Array3<f64> {
    let (_, v, c) = x.dim();
    Array3::from_shape_fn((rows.len(), v, c), |(i, j, k)| x[[rows[i], j, k]])
}

fn select_rows2(x: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let (_, k) = x.dim();
    Array2::from_shape_fn((rows.len(), k), |(i, j)| x[[rows[i], j]])
}
