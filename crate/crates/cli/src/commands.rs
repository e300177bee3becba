//! Subcommand implementations. Each returns a core `Result`; the caller
//! maps error variants to exit codes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use corticast_core::attribution::{deeplift_rescale, group_maps, Attribution, Group, Statistic};
use corticast_core::autonet::{init_model, load_checkpoint, save_checkpoint_bytes, Checkpoint, ModelConfig};
use corticast_core::dataio::{
    fit_standardization, generate_synthetic, load_manifest, save_manifest, Split, SyntheticSpec,
};
use corticast_core::evalkit::{cross_validate, evaluate_split};
use corticast_core::mesh::{
    icosphere, mirror_sagittal, read_feature_field, read_mesh, resample, FeatureField,
};
use corticast_core::optim::{build_split_inputs, train, Task, TrainConfig};
use corticast_core::{Error, Result};

use crate::config::{resolve, FileConfig};
use crate::fsio::{
    write_bytes_atomic, write_feature_field_atomic, write_mesh_atomic, write_text_atomic,
};

pub fn parse_task(name: &str) -> Result<Task> {
    match name {
        "scan_age" => Ok(Task::ScanAge),
        "birth_age" => Ok(Task::BirthAge),
        "challenge" => Ok(Task::Challenge),
        other => Err(Error::invalid(format!(
            "unknown task '{other}' (expected scan_age, birth_age, or challenge)"
        ))),
    }
}

/// Reconstruct the task a checkpoint was trained for from its head shape.
fn infer_task(checkpoint: &Checkpoint) -> Result<Task> {
    let n_channels = checkpoint.channel_names.len();
    let config = &checkpoint.model.config;
    if config.out_units == 3 {
        Ok(Task::Challenge)
    } else if config.in_channels == n_channels + 1 {
        Ok(Task::BirthAge)
    } else if config.in_channels == n_channels {
        Ok(Task::ScanAge)
    } else {
        Err(Error::Format(format!(
            "checkpoint with {} inputs does not match {} feature channels",
            config.in_channels, n_channels
        )))
    }
}

pub fn cmd_icosphere(order: u32, out: &Path) -> Result<()> {
    let mesh = icosphere(order)?;
    write_mesh_atomic(out, &mesh)?;
    println!(
        "wrote {} ({} vertices, {} triangles)",
        out.display(),
        mesh.n_vertices(),
        mesh.n_triangles()
    );
    Ok(())
}

pub fn cmd_resample(
    mesh_path: &Path,
    features_path: &Path,
    target_order: u32,
    mirror: bool,
    out: &Path,
) -> Result<()> {
    let mut source_mesh = read_mesh(mesh_path)?;
    let features = read_feature_field(features_path)?;
    if features.n_vertices() != source_mesh.n_vertices() {
        return Err(Error::Schema(format!(
            "{}: {} vertices but mesh {} has {}",
            features_path.display(),
            features.n_vertices(),
            mesh_path.display(),
            source_mesh.n_vertices()
        )));
    }
    if mirror {
        source_mesh = mirror_sagittal(&source_mesh);
    }
    let mut target = icosphere(target_order)?;
    // Mesh files carry f32 coordinates, so quantize the freshly generated
    // target the same way. When source and target describe the same sphere,
    // their vertices then match bitwise and identity resampling is exact.
    for v in &mut target.vertices {
        *v = [v[0] as f32 as f64, v[1] as f32 as f64, v[2] as f32 as f64];
    }
    let resampled = resample(&source_mesh, &features, &target)?;
    write_feature_field_atomic(out, &resampled)?;
    println!(
        "wrote {} ({} channels on {} vertices)",
        out.display(),
        resampled.n_channels(),
        resampled.n_vertices()
    );
    Ok(())
}

pub fn cmd_synth(
    subjects: usize,
    order: u32,
    seed: u64,
    noise_sigma: f64,
    preterm_fraction: f64,
    out_dir: &Path,
) -> Result<()> {
    if out_dir.exists() {
        return Err(Error::invalid(format!(
            "refusing to overwrite existing {}",
            out_dir.display()
        )));
    }
    let mut spec = SyntheticSpec::new(subjects, order, seed);
    spec.noise_sigma = noise_sigma;
    spec.preterm_fraction = preterm_fraction;
    let (dataset, _) = generate_synthetic(&spec)?;

    // Build the whole directory next to the target, then rename it in.
    let staging = out_dir.with_file_name(format!(
        ".{}.tmp-{}",
        out_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "synth".into()),
        std::process::id()
    ));
    save_manifest(&dataset, &staging)?;
    std::fs::rename(&staging, out_dir).map_err(|e| {
        let _ = std::fs::remove_dir_all(&staging);
        Error::io(out_dir, e)
    })?;
    println!(
        "wrote {} ({} subjects, order {}, {} preterm)",
        out_dir.display(),
        dataset.n_subjects(),
        order,
        dataset.preterm_count()
    );
    Ok(())
}

pub struct TrainArgs {
    pub manifest: PathBuf,
    pub out_dir: PathBuf,
    pub task: Task,
    pub train_config: TrainConfig,
    pub hidden_units: usize,
    pub n_blocks: usize,
}

impl TrainArgs {
    #[allow(clippy::too_many_arguments)]
    pub fn resolve(
        file: &FileConfig,
        manifest: Option<PathBuf>,
        out_dir: Option<PathBuf>,
        task: Option<String>,
        learning_rate: Option<f64>,
        batch_size: Option<usize>,
        patience: Option<usize>,
        max_epochs: Option<usize>,
        seed: Option<u64>,
        hidden_units: Option<usize>,
        n_blocks: Option<usize>,
    ) -> Result<TrainArgs> {
        let task = parse_task(&resolve(task, file.task.clone(), "scan_age".into()))?;
        let defaults = TrainConfig::default();
        let train_config = TrainConfig {
            learning_rate: resolve(learning_rate, file.learning_rate, defaults.learning_rate),
            batch_size: resolve(batch_size, file.batch_size, defaults.batch_size),
            patience: resolve(patience, file.patience, defaults.patience),
            max_epochs: resolve(max_epochs, file.max_epochs, defaults.max_epochs),
            seed: resolve(seed, file.seed, defaults.seed),
            target_weights: vec![1.0; task.out_units()],
            ..defaults
        };
        Ok(TrainArgs {
            manifest: crate::config::require(manifest, file.manifest.clone(), "--manifest")?,
            out_dir: crate::config::require(out_dir, file.out_dir.clone(), "--out-dir")?,
            task,
            train_config,
            hidden_units: resolve(hidden_units, file.hidden_units, 16),
            n_blocks: resolve(n_blocks, file.n_blocks, 4),
        })
    }
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let dataset = load_manifest(&args.manifest)?;
    let stats = fit_standardization(&dataset)?;
    let model_config = ModelConfig {
        hidden_units: args.hidden_units,
        n_blocks: args.n_blocks,
        ..ModelConfig::new(
            args.task.in_channels(dataset.channel_names.len()),
            args.task.out_units(),
        )
    };

    let train_batch = build_split_inputs(&dataset, args.task, &stats, Split::Train)?;
    let val_batch = build_split_inputs(&dataset, args.task, &stats, Split::Val)?;
    let model = init_model(&model_config, args.train_config.seed)?;
    let (best_model, log) = train(model, &train_batch, &val_batch, &args.train_config)?;
    let test_report = evaluate_split(&best_model, &dataset, args.task, &stats, Split::Test)?;

    let bytes = save_checkpoint_bytes(&best_model, &dataset.channel_names, Some(&stats))?;
    write_bytes_atomic(&args.out_dir.join("model.mlpc"), &bytes)?;
    write_text_atomic(&args.out_dir.join("train_log.csv"), &log.to_csv())?;
    let summary = json!({
        "best_epoch": log.best_epoch,
        "best_val_loss": log.best_val_loss,
        "stopped_epoch": log.stopped_epoch,
        "seed": log.seed,
        "task": args.task,
        "test_mae_weeks": test_report.mae_weeks,
        "n_test_subjects": test_report.n_subjects,
    });
    write_text_atomic(
        &args.out_dir.join("summary.json"),
        &serde_json::to_string_pretty(&summary).unwrap(),
    )?;
    println!(
        "trained {} epochs (best {}), test MAE {:.4} weeks; wrote {}",
        log.stopped_epoch,
        log.best_epoch,
        test_report.mae_weeks,
        args.out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(
    manifest: &Path,
    checkpoint_path: &Path,
    split: Split,
    out_dir: &Path,
) -> Result<()> {
    let dataset = load_manifest(manifest)?;
    let checkpoint = load_checkpoint(checkpoint_path)?;
    if checkpoint.channel_names != dataset.channel_names {
        return Err(Error::Schema(format!(
            "checkpoint channels {:?} do not match manifest channels {:?}",
            checkpoint.channel_names, dataset.channel_names
        )));
    }
    let task = infer_task(&checkpoint)?;
    let stats = checkpoint
        .stats
        .as_ref()
        .ok_or_else(|| Error::Format("checkpoint carries no standardization stats".into()))?;
    let report = evaluate_split(&checkpoint.model, &dataset, task, stats, split)?;
    write_text_atomic(
        &out_dir.join("eval_report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    println!(
        "split {:?}: MAE {:.6} weeks over {} subjects; wrote {}",
        split,
        report.mae_weeks,
        report.n_subjects,
        out_dir.join("eval_report.json").display()
    );
    Ok(())
}

pub fn cmd_cv(
    manifest: &Path,
    task: Task,
    folds: usize,
    seed: u64,
    train_config: &TrainConfig,
    hidden_units: usize,
    n_blocks: usize,
    out_dir: &Path,
) -> Result<()> {
    let dataset = load_manifest(manifest)?;
    let model_config = ModelConfig {
        hidden_units,
        n_blocks,
        ..ModelConfig::new(task.in_channels(dataset.channel_names.len()), task.out_units())
    };
    let mut config = train_config.clone();
    config.target_weights = vec![1.0; task.out_units()];
    let report = cross_validate(&dataset, task, &model_config, &config, folds, seed)?;
    write_text_atomic(&out_dir.join("cv_report.csv"), &report.to_csv())?;
    write_text_atomic(
        &out_dir.join("cv_report.json"),
        &serde_json::to_string_pretty(&report).unwrap(),
    )?;
    println!(
        "{} folds: mean MAE {:.4} weeks (best {:.4}, std {:.4}); wrote {}",
        folds,
        report.mean_mae,
        report.best_mae,
        report.std_mae,
        out_dir.display()
    );
    Ok(())
}

fn subject_input(inputs: &ndarray::Array3<f64>, row: usize) -> Array2<f64> {
    let (_, v, c) = inputs.dim();
    Array2::from_shape_fn((v, c), |(j, k)| inputs[[row, j, k]])
}

pub struct ExplainArgs {
    pub manifest: PathBuf,
    pub checkpoint: PathBuf,
    pub out_dir: PathBuf,
    pub backgrounds: usize,
    pub seed: u64,
    pub subject: Option<String>,
    pub feature_channel: Option<String>,
}

/// DeepLIFT attributions for every validation and test subject against a
/// training-set background sample, scaled to weeks, plus preterm/term group
/// maps. Optionally also exports one named subject's per-vertex map.
pub fn cmd_explain(args: &ExplainArgs) -> Result<()> {
    let dataset = load_manifest(&args.manifest)?;
    let checkpoint = load_checkpoint(&args.checkpoint)?;
    if checkpoint.channel_names != dataset.channel_names {
        return Err(Error::Schema(
            "checkpoint channels do not match manifest channels".into(),
        ));
    }
    let task = infer_task(&checkpoint)?;
    let stats = checkpoint
        .stats
        .as_ref()
        .ok_or_else(|| Error::Format("checkpoint carries no standardization stats".into()))?;
    let output_scale = stats.target(task.target_names()[0])?.std;

    let train_batch = build_split_inputs(&dataset, task, stats, Split::Train)?;
    let n_train = train_batch.inputs.dim().0;
    if n_train == 0 {
        return Err(Error::invalid("no training subjects for the background"));
    }
    let n_bg = args.backgrounds.min(n_train).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut pool: Vec<usize> = (0..n_train).collect();
    for i in (1..pool.len()).rev() {
        let j = rng.gen_range(0..=i);
        pool.swap(i, j);
    }
    let backgrounds: Vec<Array2<f64>> = pool[..n_bg]
        .iter()
        .map(|&row| subject_input(&train_batch.inputs, row))
        .collect();

    let mut attributions: BTreeMap<usize, Attribution> = BTreeMap::new();
    let mut worst_residual = 0.0f64;
    for split in [Split::Val, Split::Test] {
        let batch = build_split_inputs(&dataset, task, stats, split)?;
        for (row, &ix) in batch.subject_indices.iter().enumerate() {
            let input = subject_input(&batch.inputs, row);
            let a = deeplift_rescale(&checkpoint.model, &input, &backgrounds, 0)?
                .scaled(output_scale);
            worst_residual = worst_residual.max(a.completeness_residual);
            attributions.insert(ix, a);
        }
    }
    if attributions.is_empty() {
        return Err(Error::invalid("no val or test subjects to explain"));
    }

    let feature_channel = args
        .feature_channel
        .clone()
        .unwrap_or_else(|| dataset.channel_names[0].clone());
    let maps = group_maps(&dataset, &feature_channel, &attributions)?;
    for group in [Group::Preterm, Group::Term] {
        let group_name = match group {
            Group::Preterm => "preterm",
            Group::Term => "term",
        };
        let mut names = Vec::new();
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for m in maps.iter().filter(|m| m.group == group) {
            let prefix = match m.statistic {
                Statistic::MeanFeature => "feature",
                Statistic::MeanAttribution => "mean",
                Statistic::MeanAbsAttribution => "meanabs",
            };
            names.push(format!("{prefix}_{}", m.channel));
            rows.push(m.values.clone());
        }
        if names.is_empty() {
            continue;
        }
        let n_vertices = rows[0].len();
        let mut values = Array2::zeros((names.len(), n_vertices));
        for (r, row) in rows.iter().enumerate() {
            for (v, &x) in row.iter().enumerate() {
                values[[r, v]] = x;
            }
        }
        let field = FeatureField::new(names, values)?;
        write_feature_field_atomic(
            &args.out_dir.join(format!("groupmap_{group_name}.sfeat")),
            &field,
        )?;
    }

    if let Some(id) = &args.subject {
        let ix = dataset
            .subjects
            .iter()
            .position(|(m, _)| &m.subject_id == id)
            .ok_or_else(|| Error::Schema(format!("unknown subject {id}")))?;
        let a = attributions.get(&ix).ok_or_else(|| {
            Error::invalid(format!("subject {id} is not in the val or test split"))
        })?;
        let n_feature_channels = dataset.channel_names.len();
        let n_vertices = a.values.nrows();
        let mut values = Array2::zeros((n_feature_channels, n_vertices));
        for c in 0..n_feature_channels {
            for v in 0..n_vertices {
                values[[c, v]] = a.values[[v, c]];
            }
        }
        let names = dataset
            .channel_names
            .iter()
            .map(|c| format!("attr_{c}"))
            .collect();
        let field = FeatureField::new(names, values)?;
        write_feature_field_atomic(&args.out_dir.join(format!("attr_{id}.sfeat")), &field)?;
    }

    let sidecar = json!({
        "method": "deeplift_rescale",
        "background_n": n_bg,
        "completeness_residual": worst_residual,
        "output_index": 0,
        "output_scale_weeks": output_scale,
        "n_subjects": attributions.len(),
        "feature_channel": feature_channel,
    });
    write_text_atomic(
        &args.out_dir.join("explain.json"),
        &serde_json::to_string_pretty(&sidecar).unwrap(),
    )?;
    println!(
        "explained {} subjects with {} backgrounds (worst residual {:.2e} weeks); wrote {}",
        attributions.len(),
        n_bg,
        worst_residual,
        args.out_dir.display()
    );
    Ok(())
}

