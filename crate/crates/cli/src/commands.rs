use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

use bcbf::risk_bounds::{check_guarantee, GaussianTruth, RiskError, RiskEstimator, RiskMeasure, RiskSpec};
use bcbf::safety_filter::FilterError;
use bcbf::scenarios::{
    self, BenchmarkResult, Controller, RunOutcome, ScenarioConfig, ScenarioError, ScenarioKind, TraceRow,
    TrackingOutcome,
};

use crate::{BoundsArgs, RunArgs, TraceLevel, ValidateArgs};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Input(String),
    #[error("insufficient samples: this bound requires N ≥ {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::InsufficientSamples { .. } => 2,
            _ => 1,
        }
    }
}

impl From<RiskError> for CliError {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::InsufficientSamples { required, got } => CliError::InsufficientSamples { required, got },
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Risk(r) | ScenarioError::Filter(FilterError::Risk(r)) => r.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

fn print_json<T: Serialize>(value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    match std::io::stdout().write_all(text.as_bytes()) {
        // A closed pipe (e.g. `| head`) is not a failure of the command.
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(CliError::Io { path: "<stdout>".into(), source: e }),
        _ => Ok(()),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Input(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

fn parse_samples(text: &str) -> Result<Vec<f64>, CliError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let v: f64 = l.trim().parse().map_err(|_| CliError::Input(format!("line {}: not a number: {l:?}", i + 1)))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(CliError::Input(format!("line {}: value is not finite", i + 1)))
            }
        })
        .collect()
}

fn risk_spec(measure: RiskMeasure, tau: f64, delta: f64, ell: f64, lb: Option<f64>) -> Result<RiskSpec, CliError> {
    let spec = match measure {
        RiskMeasure::Var => RiskSpec::var(tau, delta),
        RiskMeasure::Cvar | RiskMeasure::Expectation => {
            let lb = lb.ok_or_else(|| CliError::Input("--lb is required for cvar and expectation".into()))?;
            if measure == RiskMeasure::Cvar {
                RiskSpec::cvar(tau, delta, lb)
            } else {
                RiskSpec::expectation(delta, lb)
            }
        }
    };
    Ok(spec.with_ell(ell))
}

#[derive(Serialize)]
struct BoundsOutput {
    measure: RiskMeasure,
    tau: f64,
    delta: f64,
    ell: f64,
    n: usize,
    value: f64,
    k: usize,
    epsilon_eff: f64,
    b_coeff: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<Vec<f64>>,
}

pub fn bounds(a: BoundsArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&a.samples).map_err(io_err(&a.samples))?;
    let samples = parse_samples(&text)?;
    let spec = risk_spec(a.measure.into(), a.tau, a.delta, a.ell, a.lb)?.with_slack_sign(a.slack_sign.into());
    spec.validate()?;
    let est = RiskEstimator::new(spec, samples.len())?;
    let r = est.evaluate(&samples)?;
    print_json(&BoundsOutput {
        measure: spec.measure,
        tau: spec.tau,
        delta: spec.delta,
        ell: spec.ell,
        n: samples.len(),
        value: r.value,
        k: r.k_index,
        epsilon_eff: r.epsilon_eff,
        b_coeff: r.b_coeff,
        weights: a.weights.then_some(r.weights),
    })
}

pub fn validate(a: ValidateArgs) -> Result<(), CliError> {
    let truth = GaussianTruth::new(a.mu, a.sigma)?;
    let lb = a.mu - a.lb_sigmas * a.sigma;
    let spec = risk_spec(a.measure.into(), a.tau, a.delta, 0.0, Some(lb))?;
    spec.validate()?;
    let report = check_guarantee(&spec, truth, a.n, a.trials, a.seed)?;
    print_json(&report)
}

fn load_config(args: &RunArgs) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(&args.config).map_err(io_err(&args.config))?;
    let mut cfg: ScenarioConfig = serde_json::from_str(&text)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.config.display())))?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn prepare_out_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    scenarios::write_trace_csv(rows, BufWriter::new(file)).map_err(|e| CliError::Input(e.to_string()))
}

fn strip_trace_timing(rows: &mut [TraceRow]) {
    rows.iter_mut().for_each(|r| r.qp_time_us = 0.0);
}

#[derive(Serialize)]
#[serde(untagged)]
enum AnyOutcome {
    Collision(RunOutcome),
    Tracking(TrackingOutcome),
}

#[derive(Serialize)]
struct SimulateOutput {
    kind: ScenarioKind,
    method: String,
    seed: u64,
    outcome: AnyOutcome,
}

pub fn simulate(a: RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&a)?;
    prepare_out_dir(&a.out_dir)?;
    let mut rows = Vec::new();
    let trace = (a.trace == TraceLevel::Full).then_some(&mut rows);
    let outcome = match cfg.kind {
        ScenarioKind::Collision => {
            let mut o = scenarios::run_collision(&cfg, Controller::Filtered(cfg.method), cfg.seed, false, trace)?;
            if a.no_timing {
                o.t_avg_filter_ms = 0.0;
            }
            AnyOutcome::Collision(o)
        }
        ScenarioKind::Tracking => {
            let mut o = scenarios::run_tracking(&cfg, cfg.method, cfg.seed, trace)?;
            if a.no_timing {
                o.t_avg_filter_ms = 0.0;
            }
            AnyOutcome::Tracking(o)
        }
    };
    if a.trace == TraceLevel::Full {
        if a.no_timing {
            strip_trace_timing(&mut rows);
        }
        write_trace(&a.out_dir.join("trace.csv"), &rows)?;
    }
    let out = SimulateOutput { kind: cfg.kind, method: cfg.method.label(), seed: cfg.seed, outcome };
    write_json(&a.out_dir.join("simulate.json"), &out)?;
    print_json(&out)
}

#[derive(Serialize)]
struct RunRow<'a> {
    method: &'a str,
    run: usize,
    seed: u64,
    status: scenarios::RunStatus,
    t_end: f64,
    steps: usize,
    t_avg_filter_ms: f64,
    infeasible_steps: usize,
    nonpositive_steps: usize,
}

fn emit_benchmark(name: &str, a: &RunArgs, mut res: BenchmarkResult) -> Result<(), CliError> {
    if a.no_timing {
        res.summary.methods.iter_mut().for_each(|m| m.t_avg_ms = 0.0);
        res.runs.iter_mut().flatten().for_each(|r| r.t_avg_filter_ms = 0.0);
        res.traces.iter_mut().flatten().for_each(|t| strip_trace_timing(t));
    }
    let dir = &a.out_dir;
    write_json(&dir.join(format!("{name}.json")), &res.summary)?;
    let csv_path = dir.join(format!("{name}.csv"));
    let file = fs::File::create(&csv_path).map_err(io_err(&csv_path))?;
    scenarios::write_summary_csv(&res.summary, BufWriter::new(file)).map_err(|e| CliError::Input(e.to_string()))?;

    if a.trace != TraceLevel::None {
        let path = dir.join(format!("{name}_runs.csv"));
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        for (m, runs) in res.summary.methods.iter().zip(&res.runs) {
            for (i, r) in runs.iter().enumerate() {
                w.serialize(RunRow {
                    method: &m.method,
                    run: i,
                    seed: scenarios::run_seed(res.summary.config.seed, i),
                    status: r.status,
                    t_end: r.t_end,
                    steps: r.steps,
                    t_avg_filter_ms: r.t_avg_filter_ms,
                    infeasible_steps: r.infeasible_steps,
                    nonpositive_steps: r.nonpositive_steps,
                })
                .map_err(|e| CliError::Input(e.to_string()))?;
            }
        }
        w.flush().map_err(io_err(&path))?;
    }
    if a.trace == TraceLevel::Full {
        let tdir = dir.join(format!("{name}_traces"));
        prepare_out_dir(&tdir)?;
        for (m, traces) in res.traces.iter().enumerate() {
            for (i, rows) in traces.iter().enumerate() {
                write_trace(&tdir.join(format!("method{m}_run{i:03}.csv")), rows)?;
            }
        }
    }
    print_json(&res.summary.methods)
}

pub fn benchmark(a: RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&a)?;
    prepare_out_dir(&a.out_dir)?;
    let res = scenarios::benchmark(&cfg, &cfg.methods, a.workers, a.trace == TraceLevel::Full)?;
    emit_benchmark("benchmark", &a, res)
}

pub fn shift(a: RunArgs) -> Result<(), CliError> {
    let cfg = load_config(&a)?;
    prepare_out_dir(&a.out_dir)?;
    let res = scenarios::shift_experiment(&cfg, a.workers, a.trace == TraceLevel::Full)?;
    emit_benchmark("shift", &a, res)
}
