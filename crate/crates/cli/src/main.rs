//! `proxtrend` command-line front end.

mod commands;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use proxtrend::Error;
use serde::{Deserialize, Serialize};

#[derive(Parser, Debug)]
#[command(
    name = "proxtrend",
    version,
    about = "Bayesian l1 trend filtering with proximal MCMC"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a trend to a two-column x,y CSV.
    Fit(FitArgs),
    /// Replicated simulation study for one trend, reported as a table row.
    Bench(BenchArgs),
    /// Simulate a noisy trend and write data.csv and truth.csv.
    Simulate(SimulateArgs),
    /// Project a point onto an epigraph set described by a JSON file.
    Project(ProjectArgs),
    /// Merge nearby grid locations into equal-width bins.
    Thin(ThinArgs),
}

/// Model and sampler settings shared by `fit` and `bench`.
#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ModelArgs {
    /// Trend filtering order.
    #[arg(long, default_value_t = 1)]
    pub order: usize,
    #[arg(long, default_value = "pbtf")]
    pub model: String,
    /// Shape restriction for pbsrtf, e.g. inc, convex, dec-concave.
    #[arg(long)]
    pub shape: Option<String>,
    /// Moreau-Yosida parameter; for pbsrtf it applies on the [0, 10] scale.
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub s2: Option<f64>,
    #[arg(long)]
    pub mu: Option<f64>,
    #[arg(long, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, default_value_t = 3000)]
    pub draws: usize,
    #[arg(long, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.8)]
    pub target_accept: f64,
    #[arg(long, default_value_t = 10)]
    pub max_depth: usize,
    /// Merge the grid into this many equal-width bins before fitting.
    #[arg(long)]
    pub thin: Option<usize>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct FitArgs {
    /// CSV with columns x,y; header optional.
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// Also write every pooled draw to draws.bin.
    #[arg(long)]
    pub save_draws: bool,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct BenchArgs {
    #[arg(long)]
    pub trend: String,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// `unit` or `uniform_random`.
    #[arg(long, default_value = "unit")]
    pub grid: String,
    #[arg(long, default_value_t = 10)]
    pub replicates: usize,
    /// Replicate r uses seed first_seed + r for data and sampler.
    #[arg(long, default_value_t = 1)]
    pub first_seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct SimulateArgs {
    /// JSON {trend, sigma, n, grid, seed}; flags below are ignored when set.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value = "piecewise_linear")]
    pub trend: String,
    #[arg(long, default_value_t = 3.0)]
    pub sigma: f64,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, default_value = "unit")]
    pub grid: String,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, short)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ProjectArgs {
    /// JSON {kind, theta, alpha, grid, order, shape}; `-` reads stdin.
    #[arg(long, short)]
    pub input: PathBuf,
    /// Output file; stdout when omitted.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct ThinArgs {
    #[arg(long, short)]
    pub input: PathBuf,
    #[arg(long)]
    pub bins: usize,
    #[arg(long, short)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => commands::fit(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Project(a) => commands::project(&a),
        Command::Thin(a) => commands::thin(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}

fn error_json(e: &Error) -> String {
    let mut v = serde_json::json!({ "error": e.kind(), "message": e.to_string() });
    if let Error::ThinningRequired { order, n, limit } = e {
        v["order"] = (*order).into();
        v["n"] = (*n).into();
        v["limit"] = (*limit).into();
        v["hint"] = format!("pass --thin {limit} or fewer bins").into();
    }
    v.to_string()
}
