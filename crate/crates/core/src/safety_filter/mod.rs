//! Risk-aware safety filter: turns belief barriers into linear constraints on
//! the control input and projects a reference input onto them.
//!
//! For a belief barrier `h_tilde(x, b)` with robot dynamics
//! `dx = (f + g u) dt + sigma dW` and object samples `do_i = v dt + d dW_i`,
//! the constraint imposed on `u` is
//!
//! ```text
//! dh/dx (f + g u) + 1/2 tr(sigma' d2h/dx2 sigma) - |dh/dx sigma|^2 / h
//!   + dh/db Xi(b) + 1/2 tr(D' d2h/db2 D) - |dh/db D|^2 / h  >=  -gamma h^3
//! ```
//!
//! All diffusions are diagonal, so traces reduce to weighted Hessian
//! diagonals and the belief terms only touch samples with non-zero weight.

mod qp;

use std::time::{Duration, Instant};

use nalgebra::{Matrix2, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use qp::{least_infeasible, solve_qp, CbfConstraint, InputBox, KktResiduals, QpError, QpSolution, QpSpec};

use crate::barriers::{Barrier, BarrierEval, BcbfEval};
use crate::belief::BeliefState;
use crate::risk_bounds::{empirical_var, RiskError, RiskEstimator, RiskSpec};
use crate::sde_models::{robot_autonomous_drift, robot_input_matrix, wrap_angle, ControlInput, ModelParams, RobotState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FilterError {
    #[error("belief barrier is not positive (h_tilde = {0})")]
    BarrierNonpositive(f64),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Risk(#[from] RiskError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Gains of the polar go-to-point law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceGains {
    pub k_rho: f64,
    pub k_alpha: f64,
    /// Distance below which the reference input is zero.
    pub stop_radius: f64,
}

impl Default for ReferenceGains {
    fn default() -> Self {
        Self { k_rho: 1.0, k_alpha: 2.0, stop_radius: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FilterConfig {
    /// Gain of the cubic class-K function `gamma h^3`.
    pub gamma: f64,
    /// Row-major weight matrix of the QP objective.
    pub q: [[f64; 2]; 2],
    #[serde(rename = "box")]
    pub input_box: InputBox,
    /// Floor for `h_tilde` in the `1/h_tilde` correction terms.
    pub h_min: f64,
    pub gains: ReferenceGains,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            gamma: 1.0,
            q: [[1.0, 0.0], [0.0, 1.0]],
            input_box: InputBox::default(),
            h_min: 1e-6,
            gains: ReferenceGains::default(),
        }
    }
}

impl FilterConfig {
    pub fn q_matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.q[0][0], self.q[0][1], self.q[1][0], self.q[1][1])
    }

    pub fn validate(&self) -> Result<(), FilterError> {
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(FilterError::InvalidConfig(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if !(self.h_min > 0.0) {
            return Err(FilterError::InvalidConfig(format!("h_min must be > 0, got {}", self.h_min)));
        }
        let g = &self.gains;
        if !(g.k_rho >= 0.0 && g.k_alpha >= 0.0 && g.stop_radius >= 0.0) {
            return Err(FilterError::InvalidConfig("reference gains must be non-negative".into()));
        }
        // Reuse the QP's own checks on Q and the box.
        let probe = QpSpec { q: self.q_matrix(), u_ref: Vector2::zeros(), bounds: self.input_box, constraints: vec![] };
        solve_qp(&probe)?;
        Ok(())
    }
}

/// Safety constraint for one belief barrier.
///
/// Fails when `h_tilde <= 0`, where the `1/h_tilde` terms lose their meaning.
pub fn assemble_constraint(
    bcbf: &BcbfEval,
    x: &RobotState,
    params: &ModelParams,
    v_est: &Vector2<f64>,
    cfg: &FilterConfig,
) -> Result<CbfConstraint, FilterError> {
    if !(bcbf.h_tilde > 0.0) {
        return Err(FilterError::BarrierNonpositive(bcbf.h_tilde));
    }
    Ok(assemble(bcbf, x, params, v_est, cfg, true))
}

/// Like [`assemble_constraint`], but drops the `1/h_tilde` terms when
/// `h_tilde <= 0` instead of failing.
pub fn assemble_constraint_relaxed(
    bcbf: &BcbfEval,
    x: &RobotState,
    params: &ModelParams,
    v_est: &Vector2<f64>,
    cfg: &FilterConfig,
) -> CbfConstraint {
    assemble(bcbf, x, params, v_est, cfg, bcbf.h_tilde > 0.0)
}

fn assemble(
    bcbf: &BcbfEval,
    x: &RobotState,
    params: &ModelParams,
    v_est: &Vector2<f64>,
    cfg: &FilterConfig,
    with_correction: bool,
) -> CbfConstraint {
    let sigma = params.sigma();
    let d = params.d();
    let lin_u = (bcbf.grad_x.transpose() * robot_input_matrix(x)).transpose();

    let drift = bcbf.grad_x.dot(&robot_autonomous_drift(x));
    let ito_x = 0.5 * (0..3).map(|i| sigma[i] * sigma[i] * bcbf.hess_x[(i, i)]).sum::<f64>();
    let corr_x = bcbf.grad_x.component_mul(&sigma).norm_squared();

    let mut belief_drift = 0.0;
    let mut corr_b = 0.0;
    for (_, g) in &bcbf.grad_b_blocks {
        belief_drift += g.dot(v_est);
        corr_b += g.component_mul(&d).norm_squared();
    }
    let ito_b = 0.5
        * bcbf
            .hess_b_blocks
            .iter()
            .map(|(_, h)| d[0] * d[0] * h[(0, 0)] + d[1] * d[1] * h[(1, 1)])
            .sum::<f64>();

    let mut lhs_const = drift + ito_x + belief_drift + ito_b;
    if with_correction {
        lhs_const -= (corr_x + corr_b) / bcbf.h_tilde.max(cfg.h_min);
    }
    let h = bcbf.h_tilde;
    CbfConstraint { lin_u, rhs: -cfg.gamma * h * h * h - lhs_const }
}

/// Polar proportional law driving the robot toward `target`, saturated to the box.
pub fn reference_controller(x: &RobotState, target: &Vector2<f64>, gains: &ReferenceGains, bounds: &InputBox) -> ControlInput {
    let e = target - x.position();
    let rho = e.norm();
    if rho < gains.stop_radius {
        return ControlInput::new(0.0, 0.0);
    }
    let alpha = wrap_angle(e[1].atan2(e[0]) - x.theta);
    let u = Vector2::new(gains.k_rho * rho * alpha.cos(), gains.k_alpha * alpha);
    ControlInput::from_vector(&bounds.clamp(&u))
}

/// Per-step diagnostics of [`SafetyFilter::filter_step`].
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StepDiagnostics {
    /// Risk bound of each barrier, in configuration order.
    pub h_tilde: Vec<f64>,
    /// Empirical quantile of each barrier's sample values at the monitoring level.
    pub empirical_var: Vec<f64>,
    /// Wall-clock time spent computing bounds, constraints and the QP.
    pub compute_time: Duration,
    pub infeasible: bool,
    pub barrier_nonpositive: bool,
    /// A sample sat on the collision singularity and its derivatives were dropped.
    pub degenerate: bool,
}

impl StepDiagnostics {
    pub fn h_tilde_min(&self) -> f64 {
        self.h_tilde.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn empirical_var_min(&self) -> f64 {
        self.empirical_var.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `|`-separated flag names, empty when the step was clean.
    pub fn flags(&self) -> String {
        let mut out = Vec::new();
        if self.infeasible {
            out.push("infeasible");
        }
        if self.barrier_nonpositive {
            out.push("nonpositive");
        }
        if self.degenerate {
            out.push("degenerate");
        }
        out.join("|")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutput {
    pub u: ControlInput,
    pub u_ref: ControlInput,
    pub constraints: Vec<CbfConstraint>,
    pub diagnostics: StepDiagnostics,
}

/// Stateful filter for a fixed barrier set, risk spec and sample count.
///
/// Holds one [`RiskEstimator`] per barrier (they differ only in the
/// essential lower bound) and scratch buffers reused across steps.
#[derive(Debug, Clone)]
pub struct SafetyFilter {
    params: ModelParams,
    cfg: FilterConfig,
    barriers: Vec<(Barrier, RiskEstimator)>,
    monitor_tau: f64,
    values: Vec<f64>,
    weights: Vec<f64>,
}

impl SafetyFilter {
    /// The essential lower bound of `spec` is replaced per barrier by
    /// [`Barrier::essential_lower_bound`].
    pub fn new(
        params: ModelParams,
        cfg: FilterConfig,
        barriers: &[Barrier],
        spec: RiskSpec,
        n: usize,
    ) -> Result<Self, FilterError> {
        cfg.validate()?;
        if barriers.is_empty() {
            return Err(FilterError::InvalidConfig("at least one barrier is required".into()));
        }
        let barriers = barriers
            .iter()
            .map(|b| Ok((*b, RiskEstimator::new(spec.with_essential_lb(b.essential_lower_bound(&params)), n)?)))
            .collect::<Result<Vec<_>, RiskError>>()?;
        // Expectation has tau = 1; monitor the 10% quantile instead.
        let monitor_tau = if spec.tau < 1.0 { spec.tau } else { 0.1 };
        Ok(Self { params, cfg, barriers, monitor_tau, values: vec![0.0; n], weights: vec![0.0; n] })
    }

    pub fn config(&self) -> &FilterConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn n(&self) -> usize {
        self.values.len()
    }

    /// Filters the reference input toward `target`.
    pub fn filter_step(
        &mut self,
        x: &RobotState,
        belief: &BeliefState,
        v_est: &Vector2<f64>,
        target: &Vector2<f64>,
    ) -> Result<FilterOutput, FilterError> {
        let u_ref = reference_controller(x, target, &self.cfg.gains, &self.cfg.input_box);
        self.filter_input(x, belief, v_est, u_ref)
    }

    /// Filters an arbitrary reference input.
    ///
    /// A non-positive belief barrier or an infeasible QP does not fail the
    /// step: the `1/h_tilde` terms are dropped, the least-infeasible input is
    /// used, and the step is flagged.
    pub fn filter_input(
        &mut self,
        x: &RobotState,
        belief: &BeliefState,
        v_est: &Vector2<f64>,
        u_ref: ControlInput,
    ) -> Result<FilterOutput, FilterError> {
        let start = Instant::now();
        if belief.n() != self.n() {
            return Err(FilterError::InvalidConfig(format!(
                "filter built for N = {}, belief has {} samples",
                self.n(),
                belief.n()
            )));
        }
        let mut diag = StepDiagnostics::default();
        let mut constraints = Vec::with_capacity(self.barriers.len());
        for (barrier, est) in &self.barriers {
            barrier.values_into(x, &belief.samples, &self.params, &mut self.values);
            let (h_tilde, _) = est.evaluate_into(&self.values, &mut self.weights)?;
            let active = self.weights.iter().enumerate().filter(|(_, w)| **w != 0.0).map(|(i, &w)| {
                let eval = barrier.evaluate(x, &belief.samples[i], &self.params).unwrap_or_else(|_| {
                    diag.degenerate = true;
                    flat_eval(self.values[i])
                });
                (i, w, eval)
            });
            let bcbf = BcbfEval::from_active(h_tilde, active);
            if !(h_tilde > 0.0) {
                diag.barrier_nonpositive = true;
            }
            constraints.push(assemble_constraint_relaxed(&bcbf, x, &self.params, v_est, &self.cfg));
            diag.h_tilde.push(h_tilde);
        }

        let spec = QpSpec {
            q: self.cfg.q_matrix(),
            u_ref: u_ref.to_vector(),
            bounds: self.cfg.input_box,
            constraints,
        };
        let u = match solve_qp(&spec) {
            Ok(sol) => sol.u,
            Err(QpError::Infeasible) => {
                diag.infeasible = true;
                least_infeasible(&spec)
            }
            Err(e) => return Err(e.into()),
        };
        diag.compute_time = start.elapsed();

        // Monitoring only; kept out of the timed section.
        for (barrier, _) in &self.barriers {
            barrier.values_into(x, &belief.samples, &self.params, &mut self.values);
            diag.empirical_var.push(empirical_var(&self.values, self.monitor_tau)?);
        }

        Ok(FilterOutput { u: ControlInput::from_vector(&u), u_ref, constraints: spec.constraints, diagnostics: diag })
    }
}

fn flat_eval(h: f64) -> BarrierEval {
    BarrierEval {
        h,
        grad_x: Vector3::zeros(),
        hess_x: nalgebra::Matrix3::zeros(),
        grad_o: Vector2::zeros(),
        hess_o: Matrix2::zeros(),
    }
}
