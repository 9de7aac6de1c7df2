//! `dbmt`: spectrogram estimation, synthetic data and theory curves from the command line.

mod commands;
mod error;
mod grid;
mod io;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "dbmt", version, about = "Dynamic Bayesian multitaper spectrogram estimation")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Subcommand, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    /// Estimate a spectrogram from a `t,y` CSV.
    Analyze(AnalyzeArgs),
    /// Generate the benchmark process and its ground-truth spectrogram.
    Synth(SynthArgs),
    /// Emit theory curves as `param,value` CSV.
    Theory(TheoryArgs),
    /// Re-run the invocation recorded in a manifest and check artifact hashes.
    Replay(ReplayArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MethodArg {
    Dbmt,
    Logdbmt,
    Mt,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct AnalyzeArgs {
    /// CSV file with header `t,y`.
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub method: MethodArg,
    /// Output directory [default: <input stem>-<method>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 6.0)]
    pub window_sec: f64,
    #[arg(long, default_value_t = 3.0)]
    pub time_bandwidth: f64,
    #[arg(long, default_value_t = 3)]
    pub tapers: usize,
    /// Number of frequency bins [default: window length in samples].
    #[arg(long)]
    pub grid: Option<usize>,
    /// Noise variance per eigen-coefficient (dbmt only) [default: median of
    /// the time-averaged multitaper spectrum].
    #[arg(long)]
    pub sigma2: Option<f64>,
    /// Window overlap fraction (mt only) [default: 0.5].
    #[arg(long)]
    pub overlap: Option<f64>,
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long, default_value_t = 100)]
    pub max_iter: usize,
    /// Confidence level of the bands.
    #[arg(long, default_value_t = 0.95)]
    pub ci: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Monte Carlo draws per cell for the dbmt bands.
    #[arg(long, default_value_t = 1000)]
    pub mc_samples: usize,
    /// Write power in dB (10 log10) instead of linear units.
    #[arg(long)]
    pub db: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct SynthArgs {
    #[arg(long, default_value = "synth")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 50.0)]
    pub sample_rate: f64,
    #[arg(long, default_value_t = 600.0)]
    pub duration: f64,
    #[arg(long, default_value_t = 0.02)]
    pub f0: f64,
    #[arg(long, default_value_t = 11.0)]
    pub ar_center: f64,
    #[arg(long, default_value_t = 0.98)]
    pub ar_radius: f64,
    #[arg(long, default_value_t = 5.0)]
    pub fm_start: f64,
    #[arg(long, default_value_t = 0.48)]
    pub fm_step: f64,
    /// Seconds between frequency steps [default: 600/23].
    #[arg(long)]
    pub fm_period: Option<f64>,
    #[arg(long, default_value_t = 0.98)]
    pub arma_radius: f64,
    /// Signal-to-noise ratio in dB, or `inf` for noiseless data.
    #[arg(long, default_value = "30")]
    pub snr_db: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Window length of the ground-truth spectrogram.
    #[arg(long, default_value_t = 6.0)]
    pub window_sec: f64,
    /// Frequency bins of the ground truth [default: window length in samples].
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Curve {
    Kappa,
    Mu,
    AlphaStar,
    Filters,
    Bounds,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BoundKind {
    Bias,
    Variance,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TheoryArgs {
    #[arg(value_enum)]
    pub curve: Curve,
    /// `start:stop:step` (inclusive) or a single value.
    #[arg(long, default_value = "0:0.99:0.01")]
    pub alpha_grid: String,
    /// `lo:hi[:count]` log-spaced (default 50 points) or a single value.
    #[arg(long, default_value = "0.1:100")]
    pub q_grid: String,
    #[arg(long, default_value_t = 10.0)]
    pub q_over_sigma2: f64,
    /// α for the filter curve.
    #[arg(long, default_value_t = 0.9)]
    pub alpha: f64,
    /// Number of windows.
    #[arg(long = "N", default_value_t = 100)]
    pub n_windows: usize,
    /// Window of interest (1-based).
    #[arg(long = "n", default_value_t = 50)]
    pub n: usize,
    /// Observation information per window.
    #[arg(long, default_value_t = 1.0)]
    pub rw: f64,
    /// Taper configuration for the bound curves.
    #[arg(long, default_value_t = 300)]
    pub window_samples: usize,
    #[arg(long, default_value_t = 3.0)]
    pub time_bandwidth: f64,
    #[arg(long, default_value_t = 3)]
    pub tapers: usize,
    #[arg(long, value_enum, default_value_t = BoundKind::Bias)]
    pub bound: BoundKind,
    /// Half-width in windows of the filter curve.
    #[arg(long, default_value_t = 10)]
    pub span: usize,
    /// Output directory; the CSV goes to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    pub manifest: PathBuf,
    /// Directory for the regenerated artifacts.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
