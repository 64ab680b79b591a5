//! Closed-loop experiments: object tracking within the field of view, and
//! collision avoidance while driving to a target.
//!
//! Every run draws a hidden ground-truth object and an `N`-sample belief from
//! the same Gaussian mixture. Each step propagates the truth with the true
//! velocity, the belief with the estimated one, filters the reference input
//! and integrates the robot. Collisions are judged against the truth, which
//! the controller never sees.
//!
//! All randomness of a run comes from its seed through separate streams, so a
//! given seed yields the same truth, belief and robot noise for every method.

use std::io::Write;

use nalgebra::Vector2;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::barriers::{collision_value, Barrier, FovEdge};
use crate::belief::{draw_ground_truth, sample_initial_belief, BeliefError, BeliefState, GaussianMixture};
use crate::risk_bounds::{RiskError, RiskMeasure, RiskSpec, SlackSign};
use crate::safety_filter::{reference_controller, FilterConfig, FilterError, SafetyFilter};
use crate::sde_models::{normal3, ControlInput, ModelError, ModelParams, NoiseStreams, ObjectState, RobotState};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("invalid scenario configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Belief(#[from] BeliefError),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Filter(#[from] FilterError),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Tracking,
    Collision,
}

/// One risk-aware controller variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub measure: RiskMeasure,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub ell: f64,
    #[serde(default)]
    pub slack_sign: SlackSign,
}

fn default_tau() -> f64 {
    0.1
}

fn default_delta() -> f64 {
    0.05
}

impl MethodConfig {
    pub fn var(tau: f64, delta: f64) -> Self {
        Self { measure: RiskMeasure::Var, tau, delta, ell: 0.0, slack_sign: SlackSign::Conservative }
    }

    pub fn cvar(tau: f64, delta: f64) -> Self {
        Self { measure: RiskMeasure::Cvar, ..Self::var(tau, delta) }
    }

    pub fn expectation(delta: f64) -> Self {
        Self { measure: RiskMeasure::Expectation, ..Self::var(1.0, delta) }
    }

    pub fn with_ell(self, ell: f64) -> Self {
        Self { ell, ..self }
    }

    /// Risk spec without an essential lower bound; the filter fills it in per barrier.
    pub fn spec(&self) -> RiskSpec {
        let tau = if self.measure == RiskMeasure::Expectation { 1.0 } else { self.tau };
        RiskSpec {
            measure: self.measure,
            tau,
            delta: self.delta,
            ell: self.ell,
            essential_lb: f64::NEG_INFINITY,
            robust_slack_sign: self.slack_sign,
        }
    }

    pub fn label(&self) -> String {
        self.spec().label()
    }
}

/// Per-run randomization used by [`benchmark`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Randomization {
    /// Side length of the square box, centred on the nominal start, from
    /// which the robot start position is drawn.
    pub start_box: f64,
    /// Each mixture mean coordinate is shifted uniformly in `[-j, j]`.
    pub mean_jitter: f64,
}

impl Default for Randomization {
    fn default() -> Self {
        Self { start_box: 1.0, mean_jitter: 0.3 }
    }
}

/// Settings of the distribution-shift comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShiftConfig {
    /// Shift budget of the robust method.
    pub ell: f64,
    /// True object velocity is this multiple of the estimate.
    pub velocity_multiplier: f64,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self { ell: 0.09, velocity_multiplier: 1.2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub kind: ScenarioKind,
    #[serde(default)]
    pub params: ModelParams,
    pub mixture: GaussianMixture,
    pub n_samples: usize,
    /// Method of `simulate`; `benchmark` uses `methods`.
    #[serde(default = "default_method")]
    pub method: MethodConfig,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub filter: FilterConfig,
    /// Nominal `(p_x, p_y, theta)` at `t = 0`.
    #[serde(default)]
    pub robot_start: [f64; 3],
    /// Goal of the reference controller in collision runs. Tracking runs
    /// hold the start position.
    #[serde(default = "default_target")]
    pub target: [f64; 2],
    /// True object velocity is this multiple of `params.object_velocity`.
    #[serde(default = "one")]
    pub velocity_multiplier: f64,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_max_time")]
    pub max_time: f64,
    #[serde(default = "default_success_tolerance")]
    pub success_tolerance: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_n_runs")]
    pub n_runs: usize,
    #[serde(default)]
    pub randomization: Randomization,
    #[serde(default)]
    pub shift: ShiftConfig,
}

fn default_method() -> MethodConfig {
    MethodConfig::var(0.1, 0.05)
}

fn default_methods() -> Vec<MethodConfig> {
    vec![MethodConfig::var(0.1, 0.05), MethodConfig::cvar(0.1, 0.05), MethodConfig::expectation(0.05)]
}

fn default_target() -> [f64; 2] {
    [3.0, 3.0]
}

fn one() -> f64 {
    1.0
}

fn default_dt() -> f64 {
    1e-3
}

fn default_max_time() -> f64 {
    10.0
}

fn default_success_tolerance() -> f64 {
    0.1
}

fn default_n_runs() -> usize {
    100
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::InvalidConfig(m));
        self.params.validate()?;
        self.mixture.validate()?;
        self.filter.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.max_time > 0.0 && self.max_time.is_finite()) {
            return bad(format!("max_time must be positive, got {}", self.max_time));
        }
        if !(self.success_tolerance > 0.0) {
            return bad(format!("success_tolerance must be positive, got {}", self.success_tolerance));
        }
        if !(self.velocity_multiplier.is_finite()) {
            return bad("velocity_multiplier must be finite".into());
        }
        if self.n_runs == 0 {
            return bad("n_runs must be at least 1".into());
        }
        if !(self.randomization.start_box >= 0.0 && self.randomization.mean_jitter >= 0.0) {
            return bad("randomization ranges must be non-negative".into());
        }
        if self.robot_start.iter().chain(&self.target).any(|v| !v.is_finite()) {
            return bad("robot_start and target must be finite".into());
        }
        for m in std::iter::once(&self.method).chain(&self.methods) {
            self.check_method(m)?;
        }
        Ok(())
    }

    /// Checks `m` against the sample count and every barrier's lower bound.
    pub fn check_method(&self, m: &MethodConfig) -> Result<(), ScenarioError> {
        for b in self.barriers() {
            let spec = m.spec().with_essential_lb(b.essential_lower_bound(&self.params));
            spec.validate()?;
            let required = spec.min_samples()?;
            if self.n_samples < required {
                return Err(RiskError::InsufficientSamples { required, got: self.n_samples }.into());
            }
        }
        Ok(())
    }

    /// Number of integration steps in a run that reaches `max_time`.
    pub fn max_steps(&self) -> usize {
        (self.max_time / self.dt - 1e-9).ceil() as usize
    }

    pub fn barriers(&self) -> Vec<Barrier> {
        match self.kind {
            ScenarioKind::Tracking => vec![Barrier::Fov(FovEdge::Left), Barrier::Fov(FovEdge::Right)],
            ScenarioKind::Collision => vec![Barrier::Collision],
        }
    }
}

/// Seed of run `index` in a benchmark started from `base`.
pub fn run_seed(base: u64, index: usize) -> u64 {
    base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(index as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Success,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub t_end: f64,
    pub steps: usize,
    /// Mean filter time per step in milliseconds.
    pub t_avg_filter_ms: f64,
    pub infeasible_steps: usize,
    pub nonpositive_steps: usize,
}

/// Summary of a fixed-horizon tracking run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackingOutcome {
    pub steps: usize,
    /// Steps where the smallest bound was not positive.
    pub violation_steps: usize,
    /// Steps where the smallest bound exceeded the smallest empirical quantile.
    pub bound_above_empirical_steps: usize,
    pub min_bound: f64,
    pub mean_u_v: f64,
    pub t_avg_filter_ms: f64,
    pub infeasible_steps: usize,
    /// Whether the ground-truth object ever left the field of view.
    pub truth_left_fov: bool,
}

impl TrackingOutcome {
    pub fn violated(&self) -> bool {
        self.violation_steps > 0
    }
}

/// One row of a per-step trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub p_x: f64,
    pub p_y: f64,
    pub theta: f64,
    pub u_v: f64,
    pub u_omega: f64,
    pub h_tilde_min: f64,
    pub empirical_var_min: f64,
    pub qp_time_us: f64,
    pub flags: String,
}

/// Initial conditions of one run, shared by every method.
#[derive(Debug, Clone)]
struct RunSetup {
    start: RobotState,
    truth: ObjectState,
    belief: BeliefState,
    streams: NoiseStreams,
}

fn setup(cfg: &ScenarioConfig, seed: u64, randomize: bool) -> Result<RunSetup, ScenarioError> {
    let mut streams = NoiseStreams::new(seed);
    let [sx, sy, sth] = cfg.robot_start;
    let mut start = RobotState::new(sx, sy, sth);
    let mut mixture = cfg.mixture.clone();
    if randomize {
        let r = &cfg.randomization;
        let half = 0.5 * r.start_box;
        if half > 0.0 {
            start.p_x += streams.init.random_range(-half..=half);
            start.p_y += streams.init.random_range(-half..=half);
        }
        if r.mean_jitter > 0.0 {
            let j = r.mean_jitter;
            let offsets: Vec<[f64; 2]> = (0..mixture.means.len())
                .map(|_| [streams.init.random_range(-j..=j), streams.init.random_range(-j..=j)])
                .collect();
            mixture = mixture.with_mean_offsets(&offsets);
        }
    }
    let truth = draw_ground_truth(&mixture, &mut streams.truth)?;
    let belief = sample_initial_belief(&mixture, cfg.n_samples, &mut streams.init)?;
    Ok(RunSetup { start, truth, belief, streams })
}

/// What drives the robot during a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Controller {
    Filtered(MethodConfig),
    /// The bare reference controller; a sanity baseline.
    Unfiltered,
}

struct StepRecord {
    u: ControlInput,
    h_tilde_min: f64,
    empirical_var_min: f64,
    secs: f64,
    flags: String,
    infeasible: bool,
    nonpositive: bool,
}

/// Drives one closed-loop simulation; `on_step` sees the state after each
/// step and the truth, and returns `false` to stop.
fn simulate<F>(
    cfg: &ScenarioConfig,
    controller: Controller,
    mut setup: RunSetup,
    target: Vector2<f64>,
    mut trace: Option<&mut Vec<TraceRow>>,
    mut on_step: F,
) -> Result<(), ScenarioError>
where
    F: FnMut(usize, &RobotState, &ObjectState, &StepRecord) -> bool,
{
    let params = &cfg.params;
    let v_est = params.velocity();
    let v_true = v_est * cfg.velocity_multiplier;
    let d = params.d();
    let mut filter = match controller {
        Controller::Filtered(m) => {
            Some(SafetyFilter::new(params.clone(), cfg.filter.clone(), &cfg.barriers(), m.spec(), cfg.n_samples)?)
        }
        Controller::Unfiltered => None,
    };
    let mut x = setup.start;
    let mut truth = setup.truth;
    for step in 0..cfg.max_steps() {
        truth = truth.step(&v_true, params, cfg.dt, &crate::sde_models::normal2(&mut setup.streams.truth))?;
        setup.belief.propagate_in_place(&v_est, &d, cfg.dt, &mut setup.streams.belief)?;
        let rec = match filter.as_mut() {
            Some(f) => {
                let out = f.filter_step(&x, &setup.belief, &v_est, &target)?;
                let dg = &out.diagnostics;
                StepRecord {
                    u: out.u,
                    h_tilde_min: dg.h_tilde_min(),
                    empirical_var_min: dg.empirical_var_min(),
                    secs: dg.compute_time.as_secs_f64(),
                    flags: dg.flags(),
                    infeasible: dg.infeasible,
                    nonpositive: dg.barrier_nonpositive,
                }
            }
            None => StepRecord {
                u: reference_controller(&x, &target, &cfg.filter.gains, &cfg.filter.input_box),
                h_tilde_min: f64::NAN,
                empirical_var_min: f64::NAN,
                secs: 0.0,
                flags: String::new(),
                infeasible: false,
                nonpositive: false,
            },
        };
        x = x.step(&rec.u, params, cfg.dt, &normal3(&mut setup.streams.robot))?;
        if let Some(rows) = trace.as_deref_mut() {
            rows.push(TraceRow {
                t: (step + 1) as f64 * cfg.dt,
                p_x: x.p_x,
                p_y: x.p_y,
                theta: x.theta,
                u_v: rec.u.u_v,
                u_omega: rec.u.u_omega,
                h_tilde_min: rec.h_tilde_min,
                empirical_var_min: rec.empirical_var_min,
                qp_time_us: rec.secs * 1e6,
                flags: rec.flags.clone(),
            });
        }
        if !on_step(step, &x, &truth, &rec) {
            break;
        }
    }
    Ok(())
}

/// Collision-avoidance run toward `cfg.target`.
///
/// With `randomize`, the start and mixture means are perturbed per
/// `cfg.randomization` from the run's own seed.
pub fn run_collision(
    cfg: &ScenarioConfig,
    controller: Controller,
    seed: u64,
    randomize: bool,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<RunOutcome, ScenarioError> {
    let s = setup(cfg, seed, randomize)?;
    let target = Vector2::from(cfg.target);
    let mut out = RunOutcome {
        status: RunStatus::Timeout,
        t_end: 0.0,
        steps: 0,
        t_avg_filter_ms: 0.0,
        infeasible_steps: 0,
        nonpositive_steps: 0,
    };
    if collision_value(&s.start, &s.truth, &cfg.params) < 0.0 {
        out.status = RunStatus::Collision;
        return Ok(out);
    }
    let mut secs = 0.0;
    simulate(cfg, controller, s, target, trace, |step, x, truth, rec| {
        out.steps = step + 1;
        out.t_end = out.steps as f64 * cfg.dt;
        secs += rec.secs;
        out.infeasible_steps += rec.infeasible as usize;
        out.nonpositive_steps += rec.nonpositive as usize;
        if collision_value(x, truth, &cfg.params) < 0.0 {
            out.status = RunStatus::Collision;
            return false;
        }
        if (x.position() - target).norm() <= cfg.success_tolerance {
            out.status = RunStatus::Success;
            return false;
        }
        true
    })?;
    out.t_avg_filter_ms = if out.steps > 0 { 1e3 * secs / out.steps as f64 } else { 0.0 };
    Ok(out)
}

/// Fixed-horizon tracking run holding the start position.
pub fn run_tracking(
    cfg: &ScenarioConfig,
    method: MethodConfig,
    seed: u64,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<TrackingOutcome, ScenarioError> {
    let s = setup(cfg, seed, false)?;
    let target = s.start.position();
    let mut out = TrackingOutcome {
        steps: 0,
        violation_steps: 0,
        bound_above_empirical_steps: 0,
        min_bound: f64::INFINITY,
        mean_u_v: 0.0,
        t_avg_filter_ms: 0.0,
        infeasible_steps: 0,
        truth_left_fov: false,
    };
    let mut secs = 0.0;
    let mut sum_v = 0.0;
    let params = cfg.params.clone();
    simulate(cfg, Controller::Filtered(method), s, target, trace, |step, x, truth, rec| {
        out.steps = step + 1;
        secs += rec.secs;
        sum_v += rec.u.u_v;
        out.min_bound = out.min_bound.min(rec.h_tilde_min);
        out.violation_steps += !(rec.h_tilde_min > 0.0) as usize;
        out.bound_above_empirical_steps += (rec.h_tilde_min > rec.empirical_var_min) as usize;
        out.infeasible_steps += rec.infeasible as usize;
        let fov_ok = [FovEdge::Left, FovEdge::Right].iter().all(|e| Barrier::Fov(*e).value(x, truth, &params) >= 0.0);
        out.truth_left_fov |= !fov_ok;
        true
    })?;
    if out.steps > 0 {
        out.t_avg_filter_ms = 1e3 * secs / out.steps as f64;
        out.mean_u_v = sum_v / out.steps as f64;
    }
    Ok(out)
}

/// Aggregate of one method over a benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub success: usize,
    pub collision: usize,
    pub timeout: usize,
    pub t_avg_ms: f64,
    pub infeasible_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub n_runs: usize,
    pub velocity_multiplier: f64,
    pub methods: Vec<MethodSummary>,
    pub config: ScenarioConfig,
}

/// Outcomes of every run, indexed `[method][run]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkResult {
    pub summary: BenchmarkSummary,
    pub runs: Vec<Vec<RunOutcome>>,
    /// Per-step traces, same indexing; empty unless requested.
    pub traces: Vec<Vec<Vec<TraceRow>>>,
}

fn summarize(label: String, n: usize, runs: &[RunOutcome]) -> MethodSummary {
    let count = |s: RunStatus| runs.iter().filter(|r| r.status == s).count();
    let steps: usize = runs.iter().map(|r| r.steps).sum();
    let ms: f64 = runs.iter().map(|r| r.t_avg_filter_ms * r.steps as f64).sum();
    MethodSummary {
        method: label,
        n,
        success: count(RunStatus::Success),
        collision: count(RunStatus::Collision),
        timeout: count(RunStatus::Timeout),
        t_avg_ms: if steps > 0 { ms / steps as f64 } else { 0.0 },
        infeasible_steps: runs.iter().map(|r| r.infeasible_steps).sum(),
    }
}

/// Paired collision benchmark: run `i` of every method shares seed, start,
/// mixture, truth and belief. Runs are spread over `workers` threads
/// (`0` = all cores); results do not depend on the thread count.
pub fn benchmark(
    cfg: &ScenarioConfig,
    methods: &[MethodConfig],
    workers: usize,
    keep_traces: bool,
) -> Result<BenchmarkResult, ScenarioError> {
    cfg.validate()?;
    for m in methods {
        cfg.check_method(m)?;
    }
    if cfg.kind != ScenarioKind::Collision {
        return Err(ScenarioError::InvalidConfig("benchmarks use the collision scenario".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ScenarioError::Pool(e.to_string()))?;
    let jobs: Vec<(usize, usize)> = (0..methods.len()).flat_map(|m| (0..cfg.n_runs).map(move |r| (m, r))).collect();
    let flat: Vec<(RunOutcome, Vec<TraceRow>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(m, r)| {
                let mut rows = Vec::new();
                let trace = keep_traces.then_some(&mut rows);
                let out = run_collision(cfg, Controller::Filtered(methods[m]), run_seed(cfg.seed, r), true, trace)?;
                Ok((out, rows))
            })
            .collect::<Result<_, ScenarioError>>()
    })?;
    let (flat, flat_traces): (Vec<RunOutcome>, Vec<Vec<TraceRow>>) = flat.into_iter().unzip();
    let runs: Vec<Vec<RunOutcome>> = flat.chunks(cfg.n_runs).map(<[RunOutcome]>::to_vec).collect();
    let traces = if keep_traces {
        flat_traces.chunks(cfg.n_runs).map(<[Vec<TraceRow>]>::to_vec).collect()
    } else {
        Vec::new()
    };
    let summary = BenchmarkSummary {
        n_runs: cfg.n_runs,
        velocity_multiplier: cfg.velocity_multiplier,
        methods: methods.iter().zip(&runs).map(|(m, r)| summarize(m.label(), cfg.n_samples, r)).collect(),
        config: cfg.clone(),
    };
    Ok(BenchmarkResult { summary, runs, traces })
}

/// Nominal vs shift-robust VaR under a faster-than-estimated object.
///
/// Uses `cfg.method` as the nominal method and the same method with
/// `ell = cfg.shift.ell` as the robust one.
pub fn shift_experiment(cfg: &ScenarioConfig, workers: usize, keep_traces: bool) -> Result<BenchmarkResult, ScenarioError> {
    let mut shifted = cfg.clone();
    shifted.velocity_multiplier = cfg.shift.velocity_multiplier;
    let nominal = MethodConfig { ell: 0.0, ..cfg.method };
    let robust = nominal.with_ell(cfg.shift.ell);
    benchmark(&shifted, &[nominal, robust], workers, keep_traces)
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Table of per-method counts: `method,N,success,collision,timeout,t_avg_ms`.
pub fn write_summary_csv<W: Write>(summary: &BenchmarkSummary, out: W) -> Result<(), ScenarioError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["method", "N", "success", "collision", "timeout", "t_avg_ms"])?;
    for m in &summary.methods {
        w.write_record([
            m.method.clone(),
            m.n.to_string(),
            m.success.to_string(),
            m.collision.to_string(),
            m.timeout.to_string(),
            format!("{:.4}", m.t_avg_ms),
        ])?;
    }
    w.flush()?;
    Ok(())
}
