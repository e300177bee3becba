//! Metrics and experiment protocols: MAE in natural units (weeks),
//! best-of-N-seeds aggregation, and k-fold cross-validation.

use serde::Serialize;

use crate::autonet::{init_model, MlpModel, ModelConfig};
use crate::dataio::{
    fit_standardization, make_cv_folds, with_splits, Dataset, Split, StandardizationStats,
};
use crate::error::{Error, Result};
use crate::optim::{build_split_inputs, train, Task, TrainConfig, TrainLog};

/// Mean absolute error; inputs already in natural units.
pub fn mae(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.is_empty() || predictions.len() != targets.len() {
        return Err(Error::invalid(format!(
            "mae needs equal non-empty inputs, got {} and {}",
            predictions.len(),
            targets.len()
        )));
    }
    let mut acc = 0.0;
    for (p, t) in predictions.iter().zip(targets) {
        acc += (p - t).abs();
    }
    Ok(acc / predictions.len() as f64)
}

/// Population standard deviation (divisor N).
pub fn population_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt()
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub task: Task,
    pub space: String,
    pub split: Split,
    pub n_subjects: usize,
    pub mae_weeks: f64,
    pub residuals_weeks: Vec<f64>,
}

/// Evaluate a trained model on one split, unstandardizing the first output
/// back into natural units. For the challenge head only the primary target
/// (GA at birth) enters the MAE, matching how the task is scored.
pub fn evaluate_split(
    model: &MlpModel,
    dataset: &Dataset,
    task: Task,
    stats: &StandardizationStats,
    split: Split,
) -> Result<EvalReport> {
    let batch = build_split_inputs(dataset, task, stats, split)?;
    if batch.subject_indices.is_empty() {
        return Err(Error::invalid(format!("split {split:?} is empty")));
    }
    let (pred, _) = model.eval_forward(&batch.inputs)?;
    let target_name = task.target_names()[0];
    let t_stats = stats.target(target_name)?;
    let mut predictions = Vec::with_capacity(batch.subject_indices.len());
    let mut targets = Vec::with_capacity(batch.subject_indices.len());
    for (row, _) in batch.subject_indices.iter().enumerate() {
        predictions.push(t_stats.unstandardize(pred[[row, 0]]));
        targets.push(t_stats.unstandardize(batch.targets[[row, 0]]));
    }
    let residuals: Vec<f64> = predictions
        .iter()
        .zip(&targets)
        .map(|(p, t)| p - t)
        .collect();
    Ok(EvalReport {
        task,
        space: "native".into(),
        split,
        n_subjects: predictions.len(),
        mae_weeks: mae(&predictions, &targets)?,
        residuals_weeks: residuals,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    /// Per-run (or per-fold) MAE in weeks, in run order.
    pub run_maes: Vec<f64>,
    pub best_mae: f64,
    pub mean_mae: f64,
    pub std_mae: f64,
}

impl ProtocolReport {
    /// Aggregate per-run MAEs: best = min, std = population divisor.
    pub fn from_run_maes(run_maes: &[f64]) -> Result<ProtocolReport> {
        if run_maes.is_empty() {
            return Err(Error::invalid("no runs to aggregate"));
        }
        let best = run_maes.iter().cloned().fold(f64::INFINITY, f64::min);
        let mean = run_maes.iter().sum::<f64>() / run_maes.len() as f64;
        Ok(ProtocolReport {
            run_maes: run_maes.to_vec(),
            best_mae: best,
            mean_mae: mean,
            std_mae: population_std(run_maes),
        })
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("run_or_fold,mae_weeks\n");
        for (i, m) in self.run_maes.iter().enumerate() {
            out.push_str(&format!("{i},{m}\n"));
        }
        out
    }
}

/// Train one model on the dataset's fixed split and return its trained
/// state, log, and test MAE in weeks.
pub fn train_once(
    dataset: &Dataset,
    task: Task,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    init_seed: u64,
) -> Result<(MlpModel, StandardizationStats, TrainLog, f64)> {
    let stats = fit_standardization(dataset)?;
    let train_batch = build_split_inputs(dataset, task, &stats, Split::Train)?;
    let val_batch = build_split_inputs(dataset, task, &stats, Split::Val)?;
    let model = init_model(model_config, init_seed)?;
    let (best_model, log) = train(model, &train_batch, &val_batch, train_config)?;
    let report = evaluate_split(&best_model, dataset, task, &stats, Split::Test)?;
    Ok((best_model, stats, log, report.mae_weeks))
}

/// Train `seeds.len()` models on the fixed split and report the best test
/// MAE with the population standard deviation across the runs.
pub fn run_protocol(
    dataset: &Dataset,
    task: Task,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    seeds: &[u64],
) -> Result<ProtocolReport> {
    if seeds.is_empty() {
        return Err(Error::invalid("run_protocol needs at least one seed"));
    }
    let mut maes = Vec::with_capacity(seeds.len());
    for (run, &seed) in seeds.iter().enumerate() {
        let (_, _, _, mae) = train_once(dataset, task, model_config, train_config, seed)
            .map_err(|e| Error::invalid(format!("run {run}: {e}")))?;
        maes.push(mae);
    }
    ProtocolReport::from_run_maes(&maes)
}

/// k-fold cross-validation: each fold refits standardization on its own
/// train shard, trains, and evaluates on its test shard.
pub fn cross_validate(
    dataset: &Dataset,
    task: Task,
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    k: usize,
    seed: u64,
) -> Result<ProtocolReport> {
    let folds = make_cv_folds(dataset, k, seed)?;
    let mut maes = Vec::with_capacity(k);
    for (fold, assignment) in folds.iter().enumerate() {
        let fold_dataset = with_splits(dataset, assignment);
        let (_, _, _, mae) = train_once(&fold_dataset, task, model_config, train_config, seed)
            .map_err(|e| Error::invalid(format!("fold {fold}: {e}")))?;
        maes.push(mae);
    }
    ProtocolReport::from_run_maes(&maes)
}

#[cfg(test)]
mod tests;
