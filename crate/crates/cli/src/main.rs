//! `gloss` command-line pipelines: ingest, synth, decompose, score, eval, sweep.

mod commands;
mod error;
mod options;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::options::{DecomposeOptions, EvalOptions, IngestOptions, ScoreOptions, SweepOptions, SynthOptions};

#[derive(Parser, Debug)]
#[command(name = "gloss", version, about = "Low-rank plus smooth-sparse tensor anomaly detection")]
struct Cli {
    /// JSON file with option values; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, env = "GLOSS_OUT")]
    out: Option<PathBuf>,
    /// Raise log verbosity (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Aggregate trip records into an hour x day x week x zone count tensor.
    Ingest(IngestOptions),
    /// Generate a synthetic benchmark instance with labeled anomalies.
    Synth(SynthOptions),
    /// Split a tensor into low-rank and sparse parts.
    Decompose(DecomposeOptions),
    /// Score every entry of a sparse part along the week mode.
    Score(ScoreOptions),
    /// ROC/AUC of a score tensor, event detection counts, or synthetic trials.
    Eval(EvalOptions),
    /// Mean AUC over a two-parameter grid.
    Sweep(SweepOptions),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).parse_default_env().init();

    let config = cli.config.as_deref();
    let out = cli.out.as_deref();
    let result = match &cli.command {
        Command::Ingest(o) => commands::ingest(o, config, out),
        Command::Synth(o) => commands::synth(o, config, out),
        Command::Decompose(o) => commands::decompose(o, config, out),
        Command::Score(o) => commands::score(o, config, out),
        Command::Eval(o) => commands::eval(o, config, out),
        Command::Sweep(o) => commands::sweep(o, config, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
