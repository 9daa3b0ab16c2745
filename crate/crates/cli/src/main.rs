//! `sonoseg` command-line interface.

mod commands;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, CliResult};

/// Worker thread count; all other parameters live in the config file.
pub const WORKERS_ENV: &str = "SONOSEG_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "sonoseg", version, about = "Sound-field datasets, joint denoising and silhouette segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one scene and write the time-domain video, mask and clean target.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Scene index; selects the stratum and the random stream.
        #[arg(long, default_value_t = 0)]
        index: usize,
        /// Simulate this scene JSON instead of sampling one.
        #[arg(long)]
        scene: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a dataset directory with split manifest.
    MakeDataset {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output.dataset_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Corrupt a clean spectral image with region-wise noise.
    AddNoise {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Scene index selecting the random stream.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the network on a dataset.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        /// Defaults to the config recorded in the dataset manifest.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to `output.run_dir` of the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Continue from the checkpoint in the run directory.
        #[arg(long)]
        resume: bool,
    },
    /// Run a trained network on a spectral image or field video.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Mask threshold; defaults to the training config value.
        #[arg(long)]
        threshold: Option<f64>,
        /// Color scale half-range of the renderings.
        #[arg(long)]
        peak: Option<f64>,
    },
    /// Apply a baseline filter with the same outputs as `infer`.
    Filter {
        /// Filter spec in TOML.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Grid spacing for spectral-image input without a `dx` key.
        #[arg(long)]
        dx: Option<f64>,
        #[arg(long)]
        peak: Option<f64>,
    },
    /// Score a network or filter on a dataset split.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        #[command(flatten)]
        target: Target,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Target {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Filter spec in TOML.
    #[arg(long)]
    filter: Option<PathBuf>,
    /// Pass the noisy input through unchanged.
    #[arg(long)]
    identity: bool,
}

fn workers() -> CliResult<Option<usize>> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => match v.parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::Usage(format!("{WORKERS_ENV} must be a positive integer, got {v:?}"))),
        },
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let workers = workers()?;
    if let Some(n) = workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate {
            config,
            index,
            scene,
            out,
        } => commands::simulate(&config, index, scene.as_deref(), &out),
        Command::MakeDataset { config, out } => commands::make_dataset(&config, out.as_deref(), workers),
        Command::AddNoise {
            config,
            clean,
            mask,
            index,
            out,
        } => commands::add_noise(&config, &clean, &mask, index, &out),
        Command::Train {
            dataset,
            config,
            out,
            resume,
        } => commands::train(&dataset, config.as_deref(), out.as_deref(), resume),
        Command::Infer {
            checkpoint,
            input,
            out,
            threshold,
            peak,
        } => commands::infer(&checkpoint, &input, &out, threshold, peak),
        Command::Filter {
            spec,
            input,
            out,
            dx,
            peak,
        } => commands::filter(&spec, &input, &out, dx, peak),
        Command::Evaluate {
            dataset,
            target,
            split,
            out,
            threshold,
        } => {
            let target = match (target.checkpoint, target.filter) {
                (Some(c), _) => commands::EvalTarget::Checkpoint(c),
                (_, Some(f)) => commands::EvalTarget::Filter(f),
                _ => commands::EvalTarget::Identity,
            };
            commands::evaluate(&dataset, &target, &split, &out, threshold)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.render().to_string();
            eprintln!("{}", CliError::Usage(msg.trim().to_string()).to_json());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
