//! `influens`: influential-observation detection and simulation from the
//! command line.

mod detect;
mod fitdist;
mod manifest;
mod report;
mod settings;
mod simulate;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use settings::{DetectSettings, FitDistSettings, ReportSettings, SimulateSettings};

#[derive(Parser)]
#[command(name = "influens", version, about = "Detect observations that sway variable selection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a detector on a CSV dataset.
    Detect(DetectSettings),
    /// Run the power / false-positive-rate simulation.
    Simulate(SimulateSettings),
    /// Fit a count family to a column of GDF values.
    FitDist(FitDistSettings),
    /// Aggregate long-format simulation CSVs into a plot-ready table.
    Report(ReportSettings),
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] influens::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

/// `--threads`, then the config file, then `INFLUENS_THREADS`; unset means
/// one thread per core.
fn init_threads(flag_or_file: Option<usize>) -> CliResult<()> {
    let env = match std::env::var("INFLUENS_THREADS") {
        Ok(v) if !v.trim().is_empty() => Some(
            v.trim().parse::<usize>().map_err(|_| CliError::Usage(format!("INFLUENS_THREADS=`{v}` is not a thread count")))?,
        ),
        _ => None,
    };
    match flag_or_file.or(env) {
        Some(0) => Err(CliError::Usage("thread count must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}"))),
        None => Ok(()),
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Detect(s) => {
            let s = s.resolve()?;
            init_threads(s.threads)?;
            detect::run(&s)
        }
        Command::Simulate(s) => {
            let s = s.resolve()?;
            init_threads(s.threads)?;
            simulate::run(&s)
        }
        Command::FitDist(s) => {
            let s = s.resolve()?;
            init_threads(s.threads)?;
            fitdist::run(&s)
        }
        Command::Report(s) => {
            let s = s.resolve()?;
            init_threads(s.threads)?;
            report::run(&s)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
