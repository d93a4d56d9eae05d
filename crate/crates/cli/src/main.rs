//! `chernflow`: homogeneous and torus Chern-Ricci flows from the command line.

mod commands;
mod model_file;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use commands::{CheckArgs, HomogeneousArgs, TorusArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("validation error: {0}")]
    Validation(String),
    #[error("numerical abort: {0}")]
    Numerical(String),
    #[error("horizon violation: {0}")]
    Horizon(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Horizon(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "chernflow", version, about = "Chern-Ricci flow experiments on Lie groups and flat tori")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form flow of a left-invariant structure, as CSV.
    Homogeneous {
        /// Model file, or a registry name.
        #[arg(long)]
        model: String,
        /// End time; defaults to min(10, guarded horizon).
        #[arg(long)]
        t_end: Option<f64>,
        /// Number of intervals on [0, t_end].
        #[arg(long, default_value_t = 100)]
        samples: usize,
        /// Blow-up offsets from T, comma separated.
        #[arg(long, value_delimiter = ',')]
        epsilon: Option<Vec<f64>>,
        /// Use the normalized flow d omega/dt = -Ric - omega.
        #[arg(long)]
        normalized: bool,
        /// Also integrate the ODE with RK4 and report the gap.
        #[arg(long)]
        crosscheck: bool,
        #[arg(long)]
        allow_non_lie: bool,
        /// Tolerance for the model invariants.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parabolic Monge-Ampere flow on a flat torus, as CSV plus a checkpoint.
    Torus {
        #[arg(long)]
        model: String,
        /// Grid points per real axis (overrides the model file).
        #[arg(long)]
        n_grid: Option<usize>,
        /// Stability factor in dt = sigma h^2 lambda_min / 4.
        #[arg(long, default_value_t = 0.5)]
        dt_sigma: f64,
        #[arg(long, default_value_t = 10.0)]
        t_end: f64,
        /// Stop once osc(phidot) falls below this.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Steps between monitor rows.
        #[arg(long, default_value_t = 50)]
        stride: usize,
        #[arg(long, default_value_t = 20)]
        max_halvings: u32,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Final-state file; defaults to the CSV path with a .ckpt extension.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Continue from a checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Identity suite over a model, or over the whole registry.
    Check {
        #[arg(long)]
        model: Option<String>,
        #[arg(long)]
        allow_non_lie: bool,
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in models.
    Examples,
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var("CHERNFLOW_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| CliError::Validation(format!("CHERNFLOW_THREADS={v} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Validation(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Homogeneous { model, t_end, samples, epsilon, normalized, crosscheck, allow_non_lie, tol, out } => {
            commands::homogeneous(HomogeneousArgs {
                model,
                t_end,
                samples,
                epsilon,
                normalized,
                crosscheck,
                allow_non_lie,
                tol,
                out,
            })
        }
        Command::Torus { model, n_grid, dt_sigma, t_end, tol, stride, max_halvings, out, checkpoint, resume } => {
            commands::torus(TorusArgs {
                model,
                n_grid,
                dt_sigma,
                t_end,
                tol,
                stride,
                max_halvings,
                out,
                checkpoint,
                resume,
            })
        }
        Command::Check { model, allow_non_lie, tol, out } => {
            commands::check(CheckArgs { model, allow_non_lie, tol, out })
        }
        Command::Examples => commands::examples(),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("chernflow: {e}");
            ExitCode::from(e.code())
        }
    }
}
