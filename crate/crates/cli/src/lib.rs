//! Command-line front end: argument parsing, error reporting and exit codes.
//!
//! Exit codes: 0 on success, 1 for configuration or usage errors, 2 for
//! runtime failures. Errors go to stderr one per line as
//! `error: kind=<kind> key=<key> msg="<message>"`.

mod commands;
mod output;

use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub use commands::{cmd_allocate, cmd_analyze, cmd_compare, cmd_replay, cmd_simulate, GridArgs, Report};
pub use output::{load_spec, Manifest, Params};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

/// Environment variable capping the worker count (0 = automatic).
pub const THREADS_ENV: &str = "PAPRLAB_THREADS";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration")]
    Config(Vec<(String, String)>),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        CliError::Config(vec![(key.into(), msg.into())])
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => EXIT_CONFIG,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    /// One machine-parsable line per problem.
    pub fn lines(&self) -> Vec<String> {
        let line = |kind: &str, key: &str, msg: &str| {
            format!("error: kind={kind} key={key} msg={:?}", msg)
        };
        match self {
            CliError::Config(items) => items.iter().map(|(k, m)| line("config", k, m)).collect(),
            CliError::Usage(m) => vec![line("usage", "-", m)],
            CliError::Runtime(m) => vec![line("runtime", "-", m)],
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "paprlab", version, about = "PAPR experiments for mixed-numerology OFDM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo PAPR campaign; writes the empirical CCDF.
    Simulate {
        #[command(flatten)]
        io: Io,
        #[arg(long)]
        trials: u64,
        /// Overrides the seed in the config.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Analytical CCDF curves (proposed and five baselines).
    Analyze {
        #[command(flatten)]
        io: Io,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Power allocation: closed form, KKT solve, grid oracle and sweep.
    Allocate {
        #[command(flatten)]
        io: Io,
        /// Grid oracle and sweep resolution in η.
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        /// Attach a Monte Carlo mean PAPR to every sweep point.
        #[arg(long)]
        with_mc: bool,
        #[arg(long, default_value_t = 5_000)]
        trials: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Empirical and analytical curves on one grid, with dB gaps.
    Compare {
        #[command(flatten)]
        io: Io,
        /// Omit or pass 0 for analytical curves only.
        #[arg(long)]
        trials: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        grid: GridArgs,
    },
    /// Regenerates an output from its manifest.
    Replay {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct Io {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

fn threads_from_env() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(_) => Ok(None),
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| CliError::config(THREADS_ENV, format!("expected a non-negative integer, got {v:?}"))),
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), CliError> {
    let threads = threads_from_env()?;
    match cli.command {
        Command::Simulate { io, trials, seed, grid } => {
            let spec = load_spec(&io.config)?;
            let params = Params::simulate(trials, seed.unwrap_or(spec.seed), &grid);
            cmd_simulate(&spec, &params, threads, &io.out)?.emit(out, err)
        }
        Command::Analyze { io, grid } => {
            let spec = load_spec(&io.config)?;
            cmd_analyze(&spec, &Params::analyze(&grid), &io.out)?.emit(out, err)
        }
        Command::Allocate { io, step, with_mc, trials, seed } => {
            let spec = load_spec(&io.config)?;
            let params = Params::allocate(step, with_mc, trials, seed.unwrap_or(spec.seed));
            cmd_allocate(&spec, &params, threads, &io.out)?.emit(out, err)
        }
        Command::Compare { io, trials, seed, grid } => {
            let spec = load_spec(&io.config)?;
            let params = Params::compare(trials.unwrap_or(0), seed.unwrap_or(spec.seed), &grid);
            cmd_compare(&spec, &params, threads, &io.out)?.emit(out, err)
        }
        Command::Replay { manifest, out: path } => cmd_replay(&manifest, threads, &path)?.emit(out, err),
    }
}

/// Runs the CLI on `args` (program name first) and returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(out, "{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            let _ = writeln!(err, "{}", CliError::Usage(first.to_string()).lines()[0]);
            return EXIT_CONFIG;
        }
    };
    match dispatch(cli, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            for line in e.lines() {
                let _ = writeln!(err, "{line}");
            }
            e.exit_code()
        }
    }
}
