//! The `distest` command line: each subcommand is one pipeline stage that reads
//! the artifacts of earlier stages from the run directory and writes its own.

pub mod artifacts;
pub mod commands;
pub mod config;
pub mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

pub use config::ExperimentConfig;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("missing artifact {}; run the stage that produces it first", .0.display())]
    MissingArtifact(PathBuf),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    /// 1 for usage, config and stage-order problems; 2 for failures while running.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::MissingArtifact(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    pub(crate) fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e).context(path.display().to_string()))
    }

    pub(crate) fn stage(stage: &str, e: distest::Error) -> Self {
        CliError::Runtime(anyhow::Error::new(e).context(format!("stage `{stage}` failed")))
    }
}

#[derive(Debug, Parser)]
#[command(name = "distest", version, about = "Distribution-aware test generation for dense classifiers")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to the config's `output_dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Master seed, overriding the config's.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Baseline,
    Vae,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Vae => "vae",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train every classifier under test.
    Train,
    /// Train the VAE on the same training data.
    TrainVae,
    /// Record per-neuron activation bounds of the target model.
    Profile,
    /// Pick the validity threshold on the calibration split.
    Calibrate,
    /// Generate a test suite from the seed split.
    Generate {
        #[arg(long, value_enum)]
        mode: Mode,
    },
    /// Re-score a suite with the VAE and threshold.
    Validate {
        #[arg(long)]
        suite: PathBuf,
    },
    /// Coverage of every record in a suite.
    Coverage {
        #[arg(long)]
        suite: PathBuf,
    },
    /// Valid / invalid / total coverage tables for the generated suites.
    Report,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::TrainVae => "train-vae",
            Command::Profile => "profile",
            Command::Calibrate => "calibrate",
            Command::Generate { .. } => "generate",
            Command::Validate { .. } => "validate",
            Command::Coverage { .. } => "coverage",
            Command::Report => "report",
        }
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let path = cli
        .config
        .ok_or_else(|| CliError::Usage("--config <path> is required".into()))?;
    let mut cfg = ExperimentConfig::load(&path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli.out.unwrap_or_else(|| cfg.output_dir.clone());
    let ctx = commands::Context::new(cfg, out);
    let extra = match &cli.command {
        Command::Train => commands::train(&ctx)?,
        Command::TrainVae => commands::train_vae(&ctx)?,
        Command::Profile => commands::profile(&ctx)?,
        Command::Calibrate => commands::calibrate(&ctx)?,
        Command::Generate { mode } => commands::generate(&ctx, *mode)?,
        Command::Validate { suite } => commands::validate(&ctx, suite)?,
        Command::Coverage { suite } => commands::coverage(&ctx, suite)?,
        Command::Report => commands::report(&ctx)?,
    };
    ctx.layout.log_line(&format!(
        "{} seed={} config={}{}",
        cli.command.name(),
        ctx.cfg.seed,
        path.display(),
        extra
    ))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}
