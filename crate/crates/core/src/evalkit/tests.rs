use super::*;

use approx::assert_abs_diff_eq;

use crate::dataio::{generate_synthetic, SyntheticSpec};
use crate::optim::build_split_inputs;

#[test]
fn mae_hand_examples() {
    assert_abs_diff_eq!(
        mae(&[1.0, 2.0], &[0.0, 0.0]).unwrap(),
        1.5,
        epsilon = 1e-15
    );
    assert_abs_diff_eq!(
        mae(&[40.0, 41.0, 38.5], &[40.5, 40.0, 39.5]).unwrap(),
        (0.5 + 1.0 + 1.0) / 3.0,
        epsilon = 1e-15
    );
    // Sign-symmetric.
    assert_abs_diff_eq!(
        mae(&[-1.0, 1.0], &[0.0, 0.0]).unwrap(),
        1.0,
        epsilon = 1e-15
    );
    assert!(mae(&[], &[]).is_err());
    assert!(mae(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn protocol_report_aggregation() {
    // Four runs: best is the minimum, std uses the population divisor.
    let report = ProtocolReport::from_run_maes(&[1.0, 1.2, 1.1, 1.3]).unwrap();
    assert_abs_diff_eq!(report.best_mae, 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(report.mean_mae, 1.15, epsilon = 1e-12);
    // population std of {1.0, 1.2, 1.1, 1.3} = sqrt(0.0125)
    assert_abs_diff_eq!(report.std_mae, 0.0125f64.sqrt(), epsilon = 1e-12);
    assert_abs_diff_eq!(report.std_mae, 0.1118, epsilon = 1e-4);

    assert!(ProtocolReport::from_run_maes(&[]).is_err());

    let single = ProtocolReport::from_run_maes(&[0.7]).unwrap();
    assert_abs_diff_eq!(single.best_mae, 0.7, epsilon = 1e-15);
    assert_abs_diff_eq!(single.std_mae, 0.0, epsilon = 1e-15);

    let csv = report.to_csv();
    assert!(csv.starts_with("run_or_fold,mae_weeks\n"));
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn population_std_hand_value() {
    assert_abs_diff_eq!(population_std(&[1.0, 3.0]), 1.0, epsilon = 1e-15);
    assert_abs_diff_eq!(population_std(&[2.0, 2.0, 2.0]), 0.0, epsilon = 1e-15);
}

fn quick_train_config(seed: u64) -> TrainConfig {
    TrainConfig {
        max_epochs: 80,
        patience: 30,
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn evaluate_split_reports_natural_units() {
    let mut spec = SyntheticSpec::new(30, 0, 21);
    spec.noise_sigma = 0.2;
    let (dataset, _) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig::new(4, 1);
    let (model, stats, _, test_mae) = train_once(
        &dataset,
        Task::ScanAge,
        &config,
        &quick_train_config(0),
        0,
    )
    .unwrap();

    let report = evaluate_split(&model, &dataset, Task::ScanAge, &stats, Split::Test).unwrap();
    assert_eq!(report.n_subjects, dataset.split_indices(Split::Test).len());
    assert_abs_diff_eq!(report.mae_weeks, test_mae, epsilon = 1e-12);
    assert_eq!(report.residuals_weeks.len(), report.n_subjects);

    // MAE equals the mean |residual| and is in a plausible weeks range,
    // not standardized units.
    let mean_abs: f64 = report
        .residuals_weeks
        .iter()
        .map(|r| r.abs())
        .sum::<f64>()
        / report.n_subjects as f64;
    assert_abs_diff_eq!(report.mae_weeks, mean_abs, epsilon = 1e-12);
    assert!(report.mae_weeks < 10.0);
}

#[test]
fn run_protocol_best_of_seeds() {
    let mut spec = SyntheticSpec::new(30, 0, 22);
    spec.noise_sigma = 0.2;
    let (dataset, _) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig::new(4, 1);
    let train_config = quick_train_config(0);
    let report = run_protocol(&dataset, Task::ScanAge, &config, &train_config, &[0, 1, 2]).unwrap();
    assert_eq!(report.run_maes.len(), 3);
    let min = report
        .run_maes
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    assert_abs_diff_eq!(report.best_mae, min, epsilon = 1e-15);

    // Individual runs reproduce independently (no cross-run state).
    let (_, _, _, mae1) =
        train_once(&dataset, Task::ScanAge, &config, &train_config, 1).unwrap();
    assert_abs_diff_eq!(report.run_maes[1], mae1, epsilon = 1e-15);
}

#[test]
fn cross_validation_tests_every_subject_once() {
    let mut spec = SyntheticSpec::new(25, 0, 23);
    spec.noise_sigma = 0.2;
    let (dataset, _) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig::new(4, 1);
    let mut train_config = quick_train_config(0);
    train_config.max_epochs = 30;
    train_config.patience = 15;
    let report =
        cross_validate(&dataset, Task::ScanAge, &config, &train_config, 5, 9).unwrap();
    assert_eq!(report.run_maes.len(), 5);
    assert!(report.run_maes.iter().all(|m| m.is_finite()));
}

#[test]
fn cv_folds_refit_standardization_per_fold() {
    // Leakage guard: fold standardization must come from the fold's own
    // train shard, so stats differ across folds.
    let (dataset, _) = generate_synthetic(&SyntheticSpec::new(12, 0, 24)).unwrap();
    let folds = crate::dataio::make_cv_folds(&dataset, 3, 0).unwrap();
    let mut means = Vec::new();
    for assignment in &folds {
        let fold_dataset = crate::dataio::with_splits(&dataset, assignment);
        let stats = crate::dataio::fit_standardization(&fold_dataset).unwrap();
        means.push(stats.channel_mean.clone());
    }
    assert_ne!(means[0], means[1]);
    assert_ne!(means[1], means[2]);
}

#[test]
fn train_once_never_sees_test_targets() {
    // Perturbing test-subject targets must not change the trained model.
    let mut spec = SyntheticSpec::new(20, 0, 25);
    spec.noise_sigma = 0.2;
    let (dataset, _) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig::new(4, 1);
    let train_config = quick_train_config(0);

    let bytes = |dataset: &crate::dataio::Dataset| {
        let (model, _, _, _) =
            train_once(dataset, Task::ScanAge, &config, &train_config, 0).unwrap();
        crate::autonet::save_checkpoint_bytes(&model, &dataset.channel_names, None).unwrap()
    };

    let a = bytes(&dataset);
    let mut tampered = dataset.clone();
    for &i in &tampered.split_indices(Split::Test) {
        tampered.subjects[i].0.pma_scan = Some(45.0);
    }
    let b = bytes(&tampered);
    assert_eq!(a, b);
}

#[test]
fn challenge_protocol_scores_birth_age() {
    let mut spec = SyntheticSpec::new(24, 0, 26);
    spec.noise_sigma = 0.2;
    let (dataset, _) = generate_synthetic(&spec).unwrap();
    let config = ModelConfig::new(4, 3);
    let mut train_config = quick_train_config(0);
    train_config.target_weights = vec![1.0, 1.0, 1.0];
    train_config.max_epochs = 30;
    train_config.patience = 15;
    let (model, stats, _, _) =
        train_once(&dataset, Task::Challenge, &config, &train_config, 0).unwrap();
    let report =
        evaluate_split(&model, &dataset, Task::Challenge, &stats, Split::Test).unwrap();

    // Scored target is GA at birth, back in weeks.
    let batch = build_split_inputs(&dataset, Task::Challenge, &stats, Split::Test).unwrap();
    let (pred, _) = model.eval_forward(&batch.inputs).unwrap();
    let t = stats.target("ga_birth").unwrap();
    let preds: Vec<f64> = (0..pred.nrows()).map(|i| t.unstandardize(pred[[i, 0]])).collect();
    let targets: Vec<f64> = batch
        .subject_indices
        .iter()
        .map(|&i| dataset.subjects[i].0.ga_birth.unwrap())
        .collect();
    assert_abs_diff_eq!(
        report.mae_weeks,
        mae(&preds, &targets).unwrap(),
        epsilon = 1e-9
    );
}
