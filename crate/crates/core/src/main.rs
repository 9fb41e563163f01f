use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;

use stationthin::cli::config::PipelineConfig;
use stationthin::cli::stages::{run_all, run_stage, Context, Stage};
use stationthin::Error;

#[derive(Parser)]
#[command(version, about = "Weather station network thinning with gradient boosted trees")]
struct Cli {
    /// Pipeline configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replace the base seed; all named seeds are re-derived from it.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    /// Worker threads (overrides the config; 0 = one per core).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate a synthetic network from the [scenario] section.
    Simulate,
    /// Quality control of raw observations.
    Qc,
    /// Resample, convert humidity and assign folds.
    Build,
    /// Hyperparameter grid search.
    Tune,
    /// Greedy backward elimination.
    Thin,
    /// Final models for the reported subsets.
    Fit,
    /// Metrics, indicator days, error percentiles and bias series.
    Evaluate,
    /// Two-reference GLM baseline.
    Baseline,
    /// Summary tables.
    Report,
    /// Every stage in order.
    RunAll,
}

fn run(cli: Cli) -> Result<(), Error> {
    let path = cli.config.ok_or_else(|| Error::Config("--config is required".into()))?;
    let mut config = PipelineConfig::load(&path)?;
    if let Some(seed) = cli.seed_override {
        config.override_seed(seed);
    }
    if let Some(w) = cli.workers {
        config.workers = w;
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build_global()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let ctx = Context::new(config, cli.out);
    let stage = match cli.command {
        Command::RunAll => return run_all(&ctx),
        Command::Simulate => Stage::Simulate,
        Command::Qc => Stage::Qc,
        Command::Build => Stage::Build,
        Command::Tune => Stage::Tune,
        Command::Thin => Stage::Thin,
        Command::Fit => Stage::Fit,
        Command::Evaluate => Stage::Evaluate,
        Command::Baseline => Stage::Baseline,
        Command::Report => Stage::Report,
    };
    run_stage(&ctx, stage)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
