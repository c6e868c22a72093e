// `!(a <= b)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

mod commands;
mod legendre;

/// Port-Hamiltonian DAE toolkit.
#[derive(Debug, Parser)]
#[command(name = "phdae", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check the Dirac structure (and Morse rank) at sampled points.
    Validate { path: PathBuf },
    /// List Dirac and Lagrange algebraic constraints and the index-1 margin.
    Classify {
        path: PathBuf,
        /// Print a machine-readable report instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Trade Dirac constraints for Lagrange constraints or back.
    Convert {
        path: PathBuf,
        #[arg(long, value_enum)]
        to: Direction,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Implicit-midpoint simulation; writes a trajectory CSV.
    Simulate {
        path: PathBuf,
        /// Initial state guess, comma separated; missing trailing entries are zero.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
        t0: f64,
        #[arg(long, allow_hyphen_values = true)]
        t1: f64,
        #[arg(long, default_value_t = 1e-3)]
        dt: f64,
        /// Input signal over `t`, one flag per port.
        #[arg(long, allow_hyphen_values = true)]
        u: Vec<String>,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Legendre transform of an expression at points of e-space.
    Legendre {
        #[arg(long = "P", allow_hyphen_values = true)]
        p: String,
        /// Variable names, comma separated.
        #[arg(long, default_value = "x")]
        vars: String,
        /// A single point, comma separated.
        #[arg(long, allow_hyphen_values = true, conflicts_with = "grid", required_unless_present = "grid")]
        at: Option<String>,
        /// `lo:hi:count` along every coordinate.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
        /// Partial transform in the `J` coordinates, written `I/J` with 1-based indices.
        #[arg(long)]
        partial: Option<String>,
        /// Add identity residual columns; fail if any exceeds 1e-7.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Direction {
    Dirac,
    Lagrange,
}

/// A command outcome that ends the process with a nonzero code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }

    pub fn math(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }
}

fn seed_from_env() -> Result<Option<u64>, Failure> {
    match std::env::var("PHDAE_SEED") {
        Ok(s) => s.trim().parse().map(Some).map_err(|_| Failure::usage(format!("PHDAE_SEED must be an unsigned integer, got '{s}'"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let seed = seed_from_env()?;
    match cli.command {
        Command::Validate { path } => commands::validate(&path, seed),
        Command::Classify { path, json } => commands::classify(&path, seed, json),
        Command::Convert { path, to, out } => commands::convert(&path, seed, matches!(to, Direction::Lagrange), out.as_deref()),
        Command::Simulate { path, x0, t0, t1, dt, u, out } => {
            commands::simulate(&path, seed, &commands::SimArgs { x0, t0, t1, dt, u }, out.as_deref())
        }
        Command::Legendre { p, vars, at, grid, partial, check } => legendre::run(&legendre::Args { p, vars, at, grid, partial, check }),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
