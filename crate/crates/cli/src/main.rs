//! `striae`: generate striation datasets, train recovery networks and run the
//! internal-wave evaluation protocol.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use config::{ExperimentConfig, Preset};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "striae", version, about = "Striation recovery toolkit")]
struct Cli {
    /// Experiment config (TOML); overrides the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Built-in parameter set used when no config is given.
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate training and held-out test datasets.
    Gen,
    /// Train the network on the generated training set.
    Train {
        /// Print the layer table and exit.
        #[arg(long)]
        dry_run: bool,
        /// Continue from these weights.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Ranging and recovery metrics along the moving-source timeline.
    Eval {
        /// Weights file (default: <out>/weights.aisn).
        #[arg(long)]
        weights: Option<PathBuf>,
        /// Use freshly initialized weights instead of a weights file.
        #[arg(long)]
        untrained: bool,
    },
    /// Sweep one wave or noise parameter at a fixed source range.
    Sweep {
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long)]
        untrained: bool,
    },
    /// Window-averaged C_D and C_R from metric CSV files.
    Report {
        /// Row CSV files written by eval or sweep.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Dump the mode table at one frequency.
    Modes {
        /// Frequency, Hz (default: band center).
        #[arg(long)]
        freq: Option<f64>,
    },
    /// Diagonal phase diagnostic of the configured internal wave.
    PhaseDiag {
        #[arg(long)]
        amplitude: Option<f64>,
        #[arg(long)]
        width: Option<f64>,
        /// Flag threshold, rad.
        #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
        threshold: f64,
    },
}

fn resolve(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::preset(cli.preset),
    };
    let seed = cli.seed.unwrap_or(cfg.seed);
    cfg = cfg.with_seed(seed);
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("threads: {e}")))?;
    }
    let cfg = resolve(&cli)?;
    match cli.command {
        Command::Gen => commands::gen(&cfg),
        Command::Train { dry_run, resume } => commands::train(&cfg, dry_run, resume.as_deref()),
        Command::Eval { weights, untrained } => commands::eval(&cfg, weights.as_deref(), untrained),
        Command::Sweep { weights, untrained } => commands::sweep(&cfg, weights.as_deref(), untrained),
        Command::Report { inputs } => commands::report(&cfg, &inputs),
        Command::Modes { freq } => commands::modes(&cfg, freq),
        Command::PhaseDiag { amplitude, width, threshold } => commands::phase_diag(&cfg, amplitude, width, threshold),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("striae: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
