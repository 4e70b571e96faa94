//! `spcrf`: oversegment images, train and evaluate the superpixel CRF network,
//! and run the gradient checks.
//!
//! Exit codes: 0 success, 1 a check or metric threshold failed, 2 usage,
//! configuration, input or runtime error.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Debug, Parser)]
#[command(name = "spcrf", version, about = "Superpixel continuous-CRF segmentation")]
pub struct Cli {
    /// TOML run configuration; every key is optional.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Extra progress output on stderr.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic skin/hair/background dataset and its manifest.
    Generate {
        /// Target directory (default: <out-dir>/data).
        #[arg(long)]
        dir: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Also corrupt pixels within this many pixels of a class boundary.
        #[arg(long)]
        boundary_noise: Option<usize>,
    },
    /// Oversegment one image; writes the superpixel map and a boundary overlay.
    Oversegment {
        image: PathBuf,
        /// Target superpixel count (default: superpixels.regions).
        #[arg(long)]
        regions: Option<usize>,
        #[arg(long)]
        compactness: Option<f64>,
        /// Superpixel map path (default: <out-dir>/<image stem>.spx).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on data.train_manifest, checkpointing every epoch.
    Train {
        /// Overrides data.train_manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Predict labels for one image; writes a label map and a color overlay.
    Infer {
        #[arg(long)]
        checkpoint: PathBuf,
        image: PathBuf,
        /// Label map path (default: <out-dir>/<image stem>_labels.pgm).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a manifest and print per-class F and accuracy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides data.test_manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Exit 1 if overall accuracy is below this.
        #[arg(long)]
        min_accuracy: Option<f64>,
        /// Exit 1 if any class F is below this.
        #[arg(long)]
        min_f: Option<f64>,
    },
    /// Finite-difference and oracle checks of every backward pass.
    Gradcheck {
        #[arg(long, value_enum, hide = true)]
        inject_fault: Option<Fault>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Fault {
    PhiSign,
    PairNormalization,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
pub enum Failure {
    /// A check or metric threshold was not met.
    Check(String),
    /// Usage, configuration, input or runtime error.
    Error(String),
}

impl From<spcrf::Error> for Failure {
    fn from(e: spcrf::Error) -> Self {
        Failure::Error(e.to_string())
    }
}

fn resolve_config(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Error)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(d) = &cli.out_dir {
        cfg.out_dir = d.clone();
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = resolve_config(&cli).and_then(|cfg| commands::run(&cli, &cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Check(msg)) => {
            eprintln!("spcrf: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Error(msg)) => {
            eprintln!("spcrf: error: {msg}");
            ExitCode::from(2)
        }
    }
}
