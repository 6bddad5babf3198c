//! `maskaudit`: generate or load a dataset, train one model per masking
//! strategy and fold, and run the audit analyses.

mod config;
mod error;
mod pipeline;

use std::net::{IpAddr, SocketAddr};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::pipeline::{Run, STUDY_BUNDLE};

#[derive(Parser, Debug)]
#[command(name = "maskaudit", version, about = "Mask-based shortcut-learning audits")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Work units to run in parallel (default: sequential).
    #[arg(short, long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic dataset (and its OOD split) into the data root.
    Generate(RunArgs),
    /// Split the dataset into a test set and folds.
    Prepare(RunArgs),
    /// Train every missing (strategy, fold) model.
    Train(RunArgs),
    /// Cross-masking matrices, DeLong comparisons, OOD table and study plan.
    Evaluate(RunArgs),
    /// Dilation sweeps.
    Sweep(RunArgs),
    /// Embedding similarity and projection.
    Embed(RunArgs),
    /// Superpixel Shapley attributions.
    Attribute(RunArgs),
    /// Re-render all results from the run record and print a summary.
    Report(RunArgs),
    /// Serve the reader study.
    ServeStudy(ServeArgs),
}

#[derive(Args, Debug)]
struct ServeArgs {
    /// Study bundle written by `evaluate`.
    #[arg(long, env = "MASKAUDIT_STUDY_BUNDLE", required_unless_present = "config")]
    bundle: Option<PathBuf>,
    /// Experiment config; the bundle is taken from its run directory.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Directory for the annotation log (default: next to the bundle).
    #[arg(long, env = "MASKAUDIT_STUDY_DATA")]
    data_root: Option<PathBuf>,
    #[arg(long, env = "MASKAUDIT_STUDY_HOST", default_value = "127.0.0.1")]
    host: IpAddr,
    #[arg(long, env = "MASKAUDIT_STUDY_PORT", default_value_t = 8080)]
    port: u16,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = if e.use_stderr() { 1 } else { 0 };
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn open(args: &RunArgs) -> Result<Run> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| CliError::Config(vec![format!("cannot read {}: {e}", args.config.display())]))?;
    let cfg = ExperimentConfig::load(&args.config)?;
    Run::open(cfg, &text, args.jobs)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Generate(a) => open(&a)?.generate(),
        Command::Prepare(a) => open(&a)?.prepare(),
        Command::Train(a) => open(&a)?.train(),
        Command::Evaluate(a) => open(&a)?.evaluate(),
        Command::Sweep(a) => open(&a)?.sweep(),
        Command::Embed(a) => open(&a)?.embed(),
        Command::Attribute(a) => open(&a)?.attribute(),
        Command::Report(a) => open(&a)?.report(),
        Command::ServeStudy(a) => serve(a),
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let bundle = match (args.bundle, args.config) {
        (Some(b), _) => b,
        (None, Some(c)) => ExperimentConfig::load(&c)?.output_root.join(STUDY_BUNDLE),
        (None, None) => unreachable!("clap requires one of them"),
    };
    let config = maskaudit_study::ServeConfig {
        bundle,
        image_root: None,
        data_root: args.data_root,
        addr: SocketAddr::new(args.host, args.port),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::io("tokio runtime", e))?;
    Ok(runtime.block_on(maskaudit_study::serve(&config))?)
}
