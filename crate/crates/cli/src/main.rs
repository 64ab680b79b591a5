//! `bcbf` command-line driver.
//!
//! Exit codes: 0 on completion, 1 on bad input or configuration, 2 when the
//! sample count is below what the requested bound needs.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use bcbf::risk_bounds::{RiskMeasure, SlackSign};

#[derive(Parser, Debug)]
#[command(name = "bcbf", version, about = "Risk-aware belief control barrier functions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Lower-bound a risk measure of the samples in a file (one value per line).
    Bounds(BoundsArgs),
    /// Check the coverage guarantee by Monte Carlo against a Gaussian.
    Validate(ValidateArgs),
    /// Run one closed-loop simulation.
    Simulate(RunArgs),
    /// Paired Monte Carlo benchmark of the configured methods.
    Benchmark(RunArgs),
    /// Nominal vs shift-robust VaR under a faster true object.
    Shift(RunArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MeasureArg {
    Var,
    Cvar,
    Expectation,
}

impl From<MeasureArg> for RiskMeasure {
    fn from(m: MeasureArg) -> Self {
        match m {
            MeasureArg::Var => RiskMeasure::Var,
            MeasureArg::Cvar => RiskMeasure::Cvar,
            MeasureArg::Expectation => RiskMeasure::Expectation,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SlackArg {
    Conservative,
    Literal,
}

impl From<SlackArg> for SlackSign {
    fn from(s: SlackArg) -> Self {
        match s {
            SlackArg::Conservative => SlackSign::Conservative,
            SlackArg::Literal => SlackSign::Literal,
        }
    }
}

#[derive(Args, Debug)]
struct BoundsArgs {
    /// File of newline-separated finite numbers.
    samples: PathBuf,
    #[arg(long, value_enum, default_value = "var")]
    measure: MeasureArg,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    /// Distribution-shift budget.
    #[arg(long, default_value_t = 0.0)]
    ell: f64,
    /// Essential lower bound of the samples; required for cvar and expectation.
    #[arg(long, allow_hyphen_values = true)]
    lb: Option<f64>,
    #[arg(long, value_enum, default_value = "conservative")]
    slack_sign: SlackArg,
    /// Include per-sample weights in the output.
    #[arg(long)]
    weights: bool,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    #[arg(long, value_enum, default_value = "var")]
    measure: MeasureArg,
    #[arg(long, default_value_t = 0.1)]
    tau: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 5000)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.5, allow_hyphen_values = true)]
    mu: f64,
    #[arg(long, default_value_t = 0.2)]
    sigma: f64,
    /// Essential lower bound used by cvar/expectation, in standard deviations below the mean.
    #[arg(long, default_value_t = 10.0)]
    lb_sigmas: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TraceLevel {
    /// Summary files only.
    None,
    /// Also one CSV row per run.
    Summary,
    /// Also one CSV per run with every step.
    Full,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "none")]
    trace: TraceLevel,
    /// Write zeros for wall-clock timings so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Bounds(a) => commands::bounds(a),
        Command::Validate(a) => commands::validate(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Shift(a) => commands::shift(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
