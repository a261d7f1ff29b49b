//! `trajrisk`: dataset ingest, predictor training and evaluation, and
//! scenario risk assessment.
//!
//! Exit codes: 0 success, 2 input error, 3 precondition failure,
//! 4 numerical failure.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use trajrisk_core::data::Split;
use trajrisk_core::predictor::Baseline;

use commands::ModelSource;
use config::RunConfig;
use error::CliError;

#[derive(Parser)]
#[command(name = "trajrisk", version, about = "Interaction-aware trajectory prediction and collision-risk maps")]
struct Cli {
    /// TOML run configuration; library defaults when omitted.
    #[arg(long, short, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set train.lr=0.01`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and window the configured recordings into a sample store.
    Ingest,
    /// Train the predictor on the store's train/val splits.
    Train {
        /// Continue from a checkpoint written by an earlier `train`.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Stop after this many epochs (the checkpoint stays resumable).
        #[arg(long, value_name = "N")]
        max_epochs: Option<usize>,
    },
    /// Horizon RMSE report (1 s to 5 s) on a store split.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Per-step predicted positions for a store split.
    Predict {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitChoice,
    },
    /// Risk map, TTC summary and prediction overlay for a scenario file.
    Assess {
        #[arg(long, value_name = "FILE")]
        scenario: PathBuf,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Print the resolved configuration as TOML.
    ShowConfig,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct ModelArgs {
    /// Trained checkpoint.
    #[arg(long, value_name = "FILE")]
    checkpoint: Option<PathBuf>,
    /// Physics baseline instead of a network.
    #[arg(long, value_enum)]
    baseline: Option<BaselineChoice>,
}

impl ModelArgs {
    fn source(&self) -> ModelSource {
        match (&self.checkpoint, self.baseline) {
            (Some(p), _) => ModelSource::Checkpoint(p.clone()),
            (None, Some(BaselineChoice::Cv)) => ModelSource::Baseline(Baseline::Cv),
            (None, Some(BaselineChoice::Ca)) => ModelSource::Baseline(Baseline::Ca),
            (None, None) => unreachable!("clap requires one of --checkpoint/--baseline"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineChoice {
    Cv,
    Ca,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitChoice {
    Train,
    Val,
    Test,
}

impl From<SplitChoice> for Split {
    fn from(s: SplitChoice) -> Self {
        match s {
            SplitChoice::Train => Split::Train,
            SplitChoice::Val => Split::Val,
            SplitChoice::Test => Split::Test,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.overrides)?;
    match cli.command {
        Command::Ingest => commands::ingest(&cfg),
        Command::Train { resume, max_epochs } => commands::train(&cfg, resume.as_deref(), max_epochs),
        Command::Eval { model, split } => commands::eval(&cfg, &model.source(), split.into()),
        Command::Predict { model, split } => commands::predict(&cfg, &model.source(), split.into()),
        Command::Assess { scenario, model } => commands::assess(&cfg, &scenario, &model.source()),
        Command::ShowConfig => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
