mod commands;
mod config;
mod error;
mod manifest;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::error::{CliError, CliResult};

/// Multivariate convolutional sparse coding: simulate data, learn dictionaries, evaluate and benchmark.
#[derive(Debug, Parser)]
#[command(name = "mvcsc", version, propagate_version = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate square/triangle signals with known atoms and activations.
    Simulate(SimulateArgs),
    /// Learn a dictionary and activations from a signals file.
    Fit(FitArgs),
    /// Recovery loss between two dictionaries, up to sign and permutation.
    Eval(EvalArgs),
    /// Timing benchmarks; each run gets its own timestamped report directory.
    Bench {
        #[command(subcommand)]
        scenario: BenchScenario,
    },
    /// Recovery loss over channel counts, noise levels and lambdas.
    Experiment(ExperimentArgs),
    /// Loss-vs-noise chart from an experiment CSV.
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
enum BenchScenario {
    /// Step timings as the number of channels grows.
    #[command(name = "scaling-p")]
    ScalingP(ScalingArgs),
    /// Objective-vs-time curves of Z-step solvers.
    Convergence(ConvergenceArgs),
}

pub const SCENARIOS: [&str; 2] = ["scaling-p", "convergence"];

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// Run directory; every output goes under it.
    #[arg(long, short = 'o')]
    pub out: PathBuf,
    /// Worker threads for per-signal and per-fit fan-out (default: all cores).
    #[arg(long)]
    pub threads: Option<usize>,
    /// TOML config file, or a manifest.json from an earlier run of the same command.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Built-in parameter set: paper-fig4 or paper-scaling.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Number of signals.
    #[arg(long, short = 'N')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_signals: Option<usize>,
    /// Number of channels.
    #[arg(long, short = 'P')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    #[arg(long, short = 'K')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    #[arg(long, short = 'L')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_len: Option<usize>,
    /// Activation positions per signal, T - L + 1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_valid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// Noise standard deviation.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Signals file (CSCT), N x P x T or P x T.
    #[arg(long, short = 'i')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<String>,
    /// Atom structure (default rank1).
    #[arg(long, value_parser = ["univariate", "full", "rank1"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    /// Number of atoms K.
    #[arg(long, short = 'K')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    /// Atom length L.
    #[arg(long, short = 'L')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_len: Option<usize>,
    /// frac:R (fraction of lambda_max, recomputed every iteration) or abs:L.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reg: Option<String>,
    /// Maximum outer iterations.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_iter: Option<usize>,
    /// Z-step stopping tolerance on the largest coordinate change.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_tol: Option<f64>,
    /// Cap on coordinate updates per signal and Z-step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_max_updates: Option<u64>,
    /// D-step stopping tolerance on the l1 change of a block.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_eps: Option<f64>,
    /// Projected-gradient steps per block and D-step.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub d_max_outer: Option<usize>,
    /// Stop when the objective changes by less than this fraction.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub convergence_tol: Option<f64>,
    /// Seed for the dictionary initialization.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Estimated dictionary: K x L temporal patterns or K x P x L atoms.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated: Option<String>,
    /// Reference dictionary, same layouts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
    /// Accepted for symmetry with the other commands; eval is deterministic.
    #[arg(long)]
    #[serde(skip)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ScalingArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Channel counts to time, comma-separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
    /// Number of signals.
    #[arg(long, short = 'N')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_signals: Option<usize>,
    /// Number of atoms K.
    #[arg(long, short = 'K')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    /// Atom length L.
    #[arg(long, short = 'L')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_len: Option<usize>,
    /// Activation positions per signal, T - L + 1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_valid: Option<usize>,
    /// Activation density of the planted signals.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    /// Z-step lambda as a fraction of lambda_max.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_fraction: Option<f64>,
    /// Z-step stopping tolerance.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_tol: Option<f64>,
    /// Timed repetitions per measurement (>= 3).
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    /// Untimed warm-up runs per measurement.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    /// Gradient evaluations per timed repetition.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub grad_evals: Option<usize>,
    /// Seed for the planted signals.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    /// Number of channels P.
    #[arg(long, short = 'P')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<usize>,
    /// Number of atoms K.
    #[arg(long, short = 'K')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_atoms: Option<usize>,
    /// Atom length L.
    #[arg(long, short = 'L')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_len: Option<usize>,
    /// Activation positions, T - L + 1.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_valid: Option<usize>,
    /// Comma-separated: lgcd, cyclic, randomized, greedy, fista.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solvers: Option<Vec<String>>,
    /// Comma-separated frac:R values.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<String>>,
    /// Random warm starts per solver and lambda.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_inits: Option<usize>,
    /// Stopping tolerance shared by the coordinate solvers.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tol: Option<f64>,
    /// Cap on coordinate updates per run.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_updates: Option<u64>,
    /// Iteration cap for the proximal-gradient solver.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fista_max_iter: Option<usize>,
    /// Gap to the best objective that counts as converged.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub precision: Option<f64>,
    /// Seed for the instance and the warm starts.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args, Serialize)]
pub struct ExperimentArgs {
    #[command(flatten)]
    #[serde(skip)]
    pub common: Common,
    #[arg(long, value_parser = ["univariate", "full", "rank1"])]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[arg(long, short = 'N')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_signals: Option<usize>,
    #[arg(long, short = 'L')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub atom_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_valid: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub density: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub channels: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sigmas: Option<Vec<f64>>,
    /// Comma-separated fractions of lambda_max.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Vec<f64>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_seeds: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_iter: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub z_tol: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[command(flatten)]
    pub common: Common,
    /// experiment.csv written by `mvcsc experiment`.
    #[arg(long, short = 'i')]
    pub input: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
}

fn flags<T: Serialize>(args: &T) -> CliResult<serde_json::Value> {
    Ok(serde_json::to_value(args)?)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Simulate(a) => {
            let threads = commands::setup_threads(&a.common)?;
            commands::simulate(&a.common, threads, flags(&a)?)
        }
        Command::Fit(a) => {
            let threads = commands::setup_threads(&a.common)?;
            commands::fit(&a.common, threads, flags(&a)?)
        }
        Command::Eval(a) => {
            let threads = commands::setup_threads(&a.common)?;
            commands::eval(&a.common, threads, flags(&a)?)
        }
        Command::Bench { scenario } => match scenario {
            BenchScenario::ScalingP(a) => {
                let threads = commands::setup_threads(&a.common)?;
                commands::bench_scaling(&a.common, threads, flags(&a)?)
            }
            BenchScenario::Convergence(a) => {
                let threads = commands::setup_threads(&a.common)?;
                commands::bench_convergence(&a.common, threads, flags(&a)?)
            }
        },
        Command::Experiment(a) => {
            let threads = commands::setup_threads(&a.common)?;
            commands::experiment(&a.common, threads, flags(&a)?)
        }
        Command::Plot(a) => {
            commands::setup_threads(&a.common)?;
            commands::plot(&a.common, &a.input)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            let argv: Vec<String> = std::env::args().collect();
            if e.kind() == clap::error::ErrorKind::InvalidSubcommand && argv.get(1).map(String::as_str) == Some("bench") {
                eprintln!("available scenarios: {}", SCENARIOS.join(", "));
            }
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let CliError::Numerical {
                diagnostics: Some(p), ..
            } = &e
            {
                eprintln!("diagnostics: {}", p.display());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
