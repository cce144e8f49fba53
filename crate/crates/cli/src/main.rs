//! `safedagger`: tracks, training runs, evaluation, run comparison and
//! observation ranking.
//!
//! Exit codes: 0 success, 1 validation failure (bad arguments, config,
//! track or model files), 2 runtime failure.

mod commands;
mod config;
mod run;
mod tracks;

use std::fmt;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use safedagger_core::imitation::Regime;
use safedagger_core::Error as CoreError;

/// A validation failure: reported with exit code 1.
#[derive(Debug)]
pub struct Invalid(pub String);

impl fmt::Display for Invalid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Invalid {}

#[derive(Parser, Debug)]
#[command(name = "safedagger", version, about = "Imitation learning with a safety policy in a 2D driving simulator")]
struct Cli {
    /// Worker threads for parallel evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// List, validate or draw tracks.
    Tracks {
        #[command(subcommand)]
        action: tracks::TracksCommand,
    },
    /// Train with one regime and write a run directory.
    Run(run::RunArgs),
    /// Drive saved policies on the test tracks.
    Eval(commands::EvalArgs),
    /// Tabulate query totals and final metrics of several run directories.
    Compare(commands::CompareArgs),
    /// Sort a dataset's observations by the safety policy's p(safe).
    Rank(commands::RankArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RegimeArg {
    Supervised,
    Dagger,
    Safedagger,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Regime {
        match r {
            RegimeArg::Supervised => Regime::Supervised,
            RegimeArg::Dagger => Regime::Dagger,
            RegimeArg::Safedagger => Regime::SafeDagger,
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<Invalid>().is_some() {
            return 1;
        }
        if let Some(core) = cause.downcast_ref::<CoreError>() {
            return match core {
                CoreError::Io(_) | CoreError::NonFiniteLoss { .. } | CoreError::Diverged { .. } | CoreError::Halted(_) => 2,
                _ => 1,
            };
        }
    }
    2
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Invalid("--threads must be at least 1".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Tracks { action } => tracks::cmd_tracks(action),
        Command::Run(args) => run::cmd_run(&args).map(|_| ()),
        Command::Eval(args) => commands::cmd_eval(&args),
        Command::Compare(args) => commands::cmd_compare(&args),
        Command::Rank(args) => commands::cmd_rank(&args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

