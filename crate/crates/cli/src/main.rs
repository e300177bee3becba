//! `corticast`: spherical-mesh regression pipeline front end.
//!
//! Exit codes: 0 success, 2 usage or invalid arguments, 3 data errors,
//! 4 missing subject metadata, 5 numeric failures.

mod commands;
mod config;
mod fsio;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use corticast_core::dataio::Split;
use corticast_core::Error;

use commands::{ExplainArgs, TrainArgs};
use config::FileConfig;

#[derive(Parser)]
#[command(
    name = "corticast",
    about = "Spherical cortical-surface phenotype regression: geometry, training, evaluation, and attribution",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate an icosphere mesh file (.smesh).
    Icosphere {
        /// Subdivision order (0..=8); order 6 has 40962 vertices.
        #[arg(long)]
        order: u32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Resample a feature file onto an icosphere with barycentric interpolation.
    Resample {
        /// Source mesh (.smesh).
        #[arg(long)]
        mesh: PathBuf,
        /// Per-vertex features on the source mesh (.sfeat).
        #[arg(long)]
        features: PathBuf,
        /// Icosphere order of the output.
        #[arg(long)]
        target_order: u32,
        /// Mirror the source mesh across the sagittal plane first.
        #[arg(long)]
        mirror: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic cohort (manifest + .sfeat files).
    Synth {
        #[arg(long, default_value_t = 530)]
        subjects: usize,
        #[arg(long, default_value_t = 2)]
        order: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gaussian noise on the regression target, in weeks.
        #[arg(long, default_value_t = 0.5)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 111.0 / 530.0)]
        preterm_fraction: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Train a model on a manifest's fixed train/val/test split.
    Train {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// scan_age, birth_age, or challenge. [default: scan_age]
        #[arg(long)]
        task: Option<String>,
        /// JSON config file; flags override its values.
        #[arg(long)]
        config: Option<PathBuf>,
        /// [default: 0.001]
        #[arg(long)]
        learning_rate: Option<f64>,
        /// [default: 32]
        #[arg(long)]
        batch_size: Option<usize>,
        /// Early-stopping patience in epochs. [default: 200]
        #[arg(long)]
        patience: Option<usize>,
        /// [default: 20000]
        #[arg(long)]
        max_epochs: Option<usize>,
        /// Governs initialization and batch shuffling. [default: 0]
        #[arg(long)]
        seed: Option<u64>,
        /// [default: 16]
        #[arg(long)]
        hidden_units: Option<usize>,
        /// [default: 4]
        #[arg(long)]
        n_blocks: Option<usize>,
    },
    /// Evaluate a trained checkpoint on one split, reporting MAE in weeks.
    Eval {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        /// train, val, or test.
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// k-fold cross-validation with per-fold standardization and training.
    Cv {
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
        /// scan_age, birth_age, or challenge. [default: scan_age]
        #[arg(long)]
        task: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of folds. [default: 10]
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        hidden_units: Option<usize>,
        #[arg(long)]
        n_blocks: Option<usize>,
    },
    /// DeepLIFT attributions and preterm/term group maps for a checkpoint.
    Explain {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        /// Training subjects sampled as the background set.
        #[arg(long, default_value_t = 32)]
        backgrounds: usize,
        /// Governs background sampling.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also export this subject's per-vertex attribution map.
        #[arg(long)]
        subject: Option<String>,
        /// Channel for the group-mean feature map. [default: first channel]
        #[arg(long)]
        feature_channel: Option<String>,
    },
}

fn parse_split(name: &str) -> Result<Split, Error> {
    match name {
        "train" => Ok(Split::Train),
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(Error::invalid(format!(
            "unknown split '{other}' (expected train, val, or test)"
        ))),
    }
}

/// CORTICAST_THREADS caps rayon parallelism; 0 or unset means automatic.
fn init_threads() -> Result<(), Error> {
    let Ok(raw) = std::env::var("CORTICAST_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Error::invalid(format!("CORTICAST_THREADS: cannot parse '{raw}'")))?;
    if n == 0 {
        return Ok(());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::invalid(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> Result<(), Error> {
    init_threads()?;
    match cli.command {
        Command::Icosphere { order, out } => commands::cmd_icosphere(order, &out),
        Command::Resample {
            mesh,
            features,
            target_order,
            mirror,
            out,
        } => commands::cmd_resample(&mesh, &features, target_order, mirror, &out),
        Command::Synth {
            subjects,
            order,
            seed,
            noise_sigma,
            preterm_fraction,
            out_dir,
        } => commands::cmd_synth(subjects, order, seed, noise_sigma, preterm_fraction, &out_dir),
        Command::Train {
            manifest,
            out_dir,
            task,
            config,
            learning_rate,
            batch_size,
            patience,
            max_epochs,
            seed,
            hidden_units,
            n_blocks,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let args = TrainArgs::resolve(
                &file,
                manifest,
                out_dir,
                task,
                learning_rate,
                batch_size,
                patience,
                max_epochs,
                seed,
                hidden_units,
                n_blocks,
            )?;
            commands::cmd_train(&args)
        }
        Command::Eval {
            manifest,
            checkpoint,
            split,
            out_dir,
        } => commands::cmd_eval(&manifest, &checkpoint, parse_split(&split)?, &out_dir),
        Command::Cv {
            manifest,
            out_dir,
            task,
            config,
            folds,
            learning_rate,
            batch_size,
            patience,
            max_epochs,
            seed,
            hidden_units,
            n_blocks,
        } => {
            let file = FileConfig::load(config.as_deref())?;
            let folds = config::resolve(folds, file.folds, 10);
            let args = TrainArgs::resolve(
                &file,
                manifest,
                out_dir,
                task,
                learning_rate,
                batch_size,
                patience,
                max_epochs,
                seed,
                hidden_units,
                n_blocks,
            )?;
            commands::cmd_cv(
                &args.manifest,
                args.task,
                folds,
                args.train_config.seed,
                &args.train_config,
                args.hidden_units,
                args.n_blocks,
                &args.out_dir,
            )
        }
        Command::Explain {
            manifest,
            checkpoint,
            out_dir,
            backgrounds,
            seed,
            subject,
            feature_channel,
        } => commands::cmd_explain(&ExplainArgs {
            manifest,
            checkpoint,
            out_dir,
            backgrounds,
            seed,
            subject,
            feature_channel,
        }),
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_) => 2,
        Error::Parse { .. } | Error::Schema(_) | Error::Format(_) | Error::Io { .. } => 3,
        Error::MissingMetadata(_) => 4,
        Error::NonFinite(_) => 5,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::MissingMetadata(subjects) = &e {
                for s in subjects {
                    eprintln!("  missing metadata: {s}");
                }
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
