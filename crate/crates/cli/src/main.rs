use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

mod commands;
mod error;
mod run;

use error::CliError;

/// Simulate Markov-switched ODE systems and estimate their invariant
/// measures and limit sets.
#[derive(Parser)]
#[command(name = "hybridsim", version)]
struct Cli {
    /// Worker threads (default: all cores). HYBRIDSIM_THREADS overrides.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Serialize, Clone)]
pub struct ConfigArg {
    /// System configuration file (TOML); see `hybridsim example-config`.
    #[arg(long, short)]
    pub config: PathBuf,
}

#[derive(Args, Serialize, Clone)]
pub struct StartArgs {
    /// Initial position, comma separated (e.g. `3.5,0.75`).
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    pub x0: Vec<f64>,
    /// Initial chain state index.
    #[arg(long, default_value_t = 0)]
    pub z0: usize,
}

#[derive(Args, Serialize)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub start: StartArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub t_end: f64,
    /// Sampling interval (default h / 100).
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct SpiderArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub start: StartArgs,
    /// Phase within the switching period, in [0, h).
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    #[arg(long)]
    pub depth: usize,
    #[arg(long, default_value_t = hybridsim::hybrid::DEFAULT_NODE_BUDGET)]
    pub max_nodes: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct StationaryArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct MeasureArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub start: StartArgs,
    /// Phases in [0, h), comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "n_phases")]
    pub phases: Option<Vec<f64>>,
    /// Use the phases i h / n for i = 0..n.
    #[arg(long)]
    pub n_phases: Option<usize>,
    /// Switching periods discarded before sampling.
    #[arg(long, default_value_t = 1000)]
    pub burn_in: usize,
    #[arg(long, default_value_t = 1_000_000)]
    pub n_samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Sub-cells per axis for the invariance check (default 16 in 1-D, 4 in 2-D).
    #[arg(long)]
    pub refine: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Args, Serialize)]
pub struct LimitSetArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub start: StartArgs,
    #[arg(long, default_value_t = 2000.0)]
    pub t_total: f64,
    /// Sampling interval, at most h / 50 (default h / 50).
    #[arg(long)]
    pub sample_dt: Option<f64>,
    #[arg(long, default_value_t = 100.0)]
    pub burn_in: f64,
    #[arg(long, default_value_t = hybridsim::limitset::DEFAULT_REVISIT_THRESHOLD)]
    pub revisit_threshold: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct HittingArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[arg(long, default_value_t = 1.0, allow_hyphen_values = true)]
    pub x0: f64,
    #[arg(long, default_value_t = 0)]
    pub z0: usize,
    #[arg(long, allow_hyphen_values = true)]
    pub x_star: f64,
    /// Number of k-period blocks in the horizon.
    #[arg(long, short)]
    pub m: u64,
    #[arg(long, default_value_t = 100_000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct FixedPointArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    /// Chain state whose vector field is solved.
    #[arg(long)]
    pub state: usize,
    /// Newton seeds as `x1,x2;x1,x2;...` (default: a 12-per-axis lattice over the domain).
    #[arg(long, allow_hyphen_values = true)]
    pub seeds: Option<String>,
    #[arg(long, default_value_t = 1e-10)]
    pub tol: f64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Serialize)]
pub struct OperatorArgs {
    #[command(flatten)]
    pub config: ConfigArg,
    #[command(flatten)]
    pub start: StartArgs,
    #[arg(long, default_value_t = 0.0)]
    pub t0: f64,
    /// Largest number of switching periods.
    #[arg(long)]
    pub steps: usize,
    /// Coordinate used as the observable, 1-based.
    #[arg(long, default_value_t = 1)]
    pub coordinate: usize,
    /// Also estimate by Monte Carlo with this many trajectories.
    #[arg(long)]
    pub mc_trials: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = hybridsim::hybrid::DEFAULT_NODE_BUDGET)]
    pub max_nodes: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate one trajectory and write samples `time state x1..xd`.
    Simulate(SimulateArgs),
    /// Enumerate every switching branch to a fixed depth.
    Spider(SpiderArgs),
    /// Stationary distribution of the switching chain.
    Stationary(StationaryArgs),
    /// Empirical invariant measures per phase with an invariance report.
    Measure(MeasureArgs),
    /// Estimate the stochastic limit set by recurrent occupancy.
    Limitset(LimitSetArgs),
    /// Hitting experiment for the 1-D linear system.
    Hitting(HittingArgs),
    /// Equilibria of one vector field with their stability type.
    FixedPoints(FixedPointArgs),
    /// Exact Markov-operator values of a coordinate, optionally with Monte Carlo.
    Operator(OperatorArgs),
    /// Print the annotated example config of a built-in system.
    ExampleConfig {
        /// `linear_1d` or `cstr_2d`.
        system: String,
    },
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    match std::env::var("HYBRIDSIM_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .map(Some)
            .ok_or_else(|| CliError::Usage(format!("HYBRIDSIM_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => match flag {
            Some(0) => Err(CliError::Usage("--threads must be positive".into())),
            other => Ok(other),
        },
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = thread_count(cli.threads)? {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot start thread pool: {e}")))?;
    }
    match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Spider(a) => commands::spider(&a),
        Command::Stationary(a) => commands::stationary(&a),
        Command::Measure(a) => commands::measure(&a),
        Command::Limitset(a) => commands::limitset(&a),
        Command::Hitting(a) => commands::hitting(&a),
        Command::FixedPoints(a) => commands::fixed_points(&a),
        Command::Operator(a) => commands::operator(&a),
        Command::ExampleConfig { system } => commands::example_config(&system),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
