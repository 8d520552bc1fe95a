//! Command-line front end for `nlra-core`.

pub mod commands;
pub mod error;
pub mod matrix_file;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlra_core::Activation;

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "nlra", version, about = "Nonlinear low-rank approximation of ReLU layers")]
pub struct Cli {
    /// Report `wall_time_ms` as null so repeated runs print identical JSON.
    #[arg(long, global = true)]
    pub no_timing: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Rank-r approximation of a weight matrix.
    Approx(ApproxArgs),
    /// Truncated-SVD gap sweep over spherical weights, written as CSV.
    GapSweep(GapSweepArgs),
    /// Learn a low-rank layer from samples of a synthetic ground truth.
    Learn(LearnArgs),
    /// Population risk of a candidate against a target.
    Risk(RiskArgs),
    /// Nonlinearity kernel of a weight matrix.
    Kernel(KernelArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Spectral,
    Nkp,
    ReluSvd,
    Lfai,
    LfaiWs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KernelMode {
    Estimated,
    ClosedForm,
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    s.parse::<Activation>().map_err(|e| e.to_string())
}

fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>, String> {
    s.split(',')
        .map(|t| {
            t.trim()
                .parse::<T>()
                .map_err(|_| format!("cannot parse {t:?} in list {s:?}"))
        })
        .collect()
}

/// A comma-separated list flag.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

fn parse_usize_list(s: &str) -> Result<List<usize>, String> {
    parse_list(s).map(List)
}

fn parse_f64_list(s: &str) -> Result<List<f64>, String> {
    parse_list(s).map(List)
}

#[derive(Debug, Args)]
pub struct ApproxArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub rank: usize,
    #[arg(long, value_enum)]
    pub method: Method,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    pub activation: Activation,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also report a Monte Carlo risk estimate with this many samples.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long, default_value_t = 10_000_000)]
    pub subset_cap: u128,
    #[arg(long)]
    pub output_y: PathBuf,
    #[arg(long, requires = "output_v")]
    pub output_u: Option<PathBuf>,
    #[arg(long, requires = "output_u")]
    pub output_v: Option<PathBuf>,
    #[arg(long, default_value_t = 5e-3)]
    pub step_size: f64,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 6)]
    pub epochs: usize,
    #[arg(long, default_value_t = 250)]
    pub steps_per_epoch: usize,
}

#[derive(Debug, Args)]
pub struct GapSweepArgs {
    /// Comma-separated base sizes n.
    #[arg(long, value_parser = parse_usize_list)]
    pub dims: List<usize>,
    /// Comma-separated rank scales r/d.
    #[arg(long, value_parser = parse_f64_list)]
    pub rank_scales: List<f64>,
    #[arg(long, default_value_t = 1.5)]
    pub width_exponent: f64,
    #[arg(long, default_value_t = 1.0)]
    pub width_coeff: f64,
    #[arg(long, default_value_t = 0.2)]
    pub dim_fraction: f64,
    #[arg(long, default_value_t = 3)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub d: usize,
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub rank: usize,
    #[arg(long)]
    pub n_w: usize,
    #[arg(long)]
    pub n_k: usize,
    /// Recovery ball radius; estimated from the labels when absent.
    #[arg(long)]
    pub radius: Option<f64>,
    #[arg(long, default_value_t = 60)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "estimated")]
    pub kernel: KernelMode,
}

#[derive(Debug, Args)]
pub struct RiskArgs {
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long)]
    pub y: PathBuf,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    pub activation: Activation,
    /// Monte Carlo samples; required for the estimate unless the activation
    /// is ReLU, where the exact risk is always reported.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct KernelArgs {
    #[arg(long)]
    pub w: PathBuf,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    pub activation: Activation,
    /// Estimate the ReLU kernel from this many Gaussian samples instead of
    /// evaluating it.
    #[arg(long)]
    pub estimate_samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

/// Runs a parsed command, printing its JSON report to stdout.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let timing = !cli.no_timing;
    let json = match cli.command {
        Command::Approx(a) => commands::approx(&a, timing)?,
        Command::GapSweep(a) => commands::gap_sweep(&a, timing)?,
        Command::Learn(a) => commands::learn(&a, timing)?,
        Command::Risk(a) => commands::risk(&a, timing)?,
        Command::Kernel(a) => commands::kernel(&a, timing)?,
    };
    println!("{json}");
    Ok(())
}

/// Applies `NLRA_THREADS` to the global thread pool.
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("NLRA_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Input(format!("NLRA_THREADS must be a positive integer, got {raw:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))
}
