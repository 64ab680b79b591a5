//! Per-sample barrier functions with analytic derivatives, and their
//! composition into a belief barrier through a risk bound.
//!
//! Two barriers are provided:
//!
//! * Field of view: with `(qx', qy')` the object in the robot frame,
//!   `h_i = tan(beta/2) qx' - r_o / cos(beta/2) + (-1)^i qy'`. Both edges are
//!   non-negative exactly when the object disk lies inside the sector of
//!   amplitude `beta` around the robot heading.
//! * Collision: `h = |p_hat| - (r_e + r_o)` with
//!   `p_hat = p - q + s_e (cos(theta), sin(theta))`.
//!
//! The belief barrier is `h_tilde = sum_i w_i h_i + b_coeff b`, where the
//! weights come from [`BoundResult`]. Away from ties the weights are locally
//! constant, so derivatives of `h_tilde` are the same weighted sums of the
//! per-sample derivatives.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::risk_bounds::BoundResult;
use crate::sde_models::{ModelParams, ObjectState, RobotState};

/// Below this `|p_hat|` the collision barrier gradient is undefined.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BarrierError {
    #[error("degenerate geometry: |p_hat| = {0:e}")]
    DegenerateGeometry(f64),
    #[error("weight vector has length {weights}, but {evals} barrier evaluations were given")]
    LengthMismatch { weights: usize, evals: usize },
}

/// Barrier value and derivatives for one object sample.
///
/// Mixed partials in `(x, o)` are not needed by the safety constraint and are
/// not computed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierEval {
    pub h: f64,
    pub grad_x: Vector3<f64>,
    pub hess_x: Matrix3<f64>,
    pub grad_o: Vector2<f64>,
    pub hess_o: Matrix2<f64>,
}

/// Which edge of the field-of-view sector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FovEdge {
    /// `i = 1`: bounds the object from the left (positive local `y`).
    Left,
    /// `i = 2`: bounds the object from the right.
    Right,
}

impl FovEdge {
    /// The `(-1)^i` factor multiplying the local `y` coordinate.
    fn sign(self) -> f64 {
        match self {
            FovEdge::Left => -1.0,
            FovEdge::Right => 1.0,
        }
    }
}

/// Object position in the robot frame, `R(theta)^T (q - p)`.
pub fn local_frame(x: &RobotState, o: &ObjectState) -> Vector2<f64> {
    let (s, c) = x.theta.sin_cos();
    let dx = o.q_x - x.p_x;
    let dy = o.q_y - x.p_y;
    Vector2::new(c * dx + s * dy, -s * dx + c * dy)
}

/// Inverse of [`local_frame`].
pub fn world_frame(x: &RobotState, local: &Vector2<f64>) -> ObjectState {
    let (s, c) = x.theta.sin_cos();
    ObjectState::new(x.p_x + c * local[0] - s * local[1], x.p_y + s * local[0] + c * local[1])
}

fn fov_consts(params: &ModelParams) -> (f64, f64) {
    let half = 0.5 * params.beta;
    (half.tan(), params.r_o / half.cos())
}

pub fn fov_value(x: &RobotState, o: &ObjectState, params: &ModelParams, edge: FovEdge) -> f64 {
    let (t, off) = fov_consts(params);
    let l = local_frame(x, o);
    t * l[0] - off + edge.sign() * l[1]
}

pub fn fov_barrier(x: &RobotState, o: &ObjectState, params: &ModelParams, edge: FovEdge) -> BarrierEval {
    let (t, off) = fov_consts(params);
    let sg = edge.sign();
    let (s, c) = x.theta.sin_cos();
    let l = local_frame(x, o);
    let (lx, ly) = (l[0], l[1]);

    // d(lx)/dx = (-c, -s, ly), d(ly)/dx = (s, -c, -lx)
    let grad_x = Vector3::new(-c * t + sg * s, -s * t - sg * c, ly * t - sg * lx);
    // Only theta-rows are non-zero in the local-coordinate Hessians.
    let h_px_th = t * s + sg * c;
    let h_py_th = -t * c + sg * s;
    let h_th_th = -t * lx - sg * ly;
    let hess_x = Matrix3::new(
        0.0, 0.0, h_px_th, //
        0.0, 0.0, h_py_th, //
        h_px_th, h_py_th, h_th_th,
    );
    let grad_o = Vector2::new(c * t - sg * s, s * t + sg * c);

    BarrierEval { h: t * lx - off + sg * ly, grad_x, hess_x, grad_o, hess_o: Matrix2::zeros() }
}

fn p_hat(x: &RobotState, o: &ObjectState, s_e: f64) -> (Vector2<f64>, f64, f64) {
    let (s, c) = x.theta.sin_cos();
    (Vector2::new(x.p_x - o.q_x + s_e * c, x.p_y - o.q_y + s_e * s), s, c)
}

pub fn collision_value(x: &RobotState, o: &ObjectState, params: &ModelParams) -> f64 {
    let (ph, _, _) = p_hat(x, o, params.s_e);
    ph.norm() - (params.r_e + params.r_o)
}

pub fn collision_barrier(
    x: &RobotState,
    o: &ObjectState,
    params: &ModelParams,
) -> Result<BarrierEval, BarrierError> {
    let se = params.s_e;
    let (ph, s, c) = p_hat(x, o, se);
    let n = ph.norm();
    if n < DEGENERATE_DISTANCE {
        return Err(BarrierError::DegenerateGeometry(n));
    }
    let unit = ph / n;
    // Hessian of |p_hat| with respect to p_hat.
    let hn = (Matrix2::identity() - unit * unit.transpose()) / n;

    // d p_hat / dx
    let jac = nalgebra::Matrix2x3::new(1.0, 0.0, -se * s, 0.0, 1.0, se * c);
    let grad_x = jac.transpose() * unit;
    let mut hess_x = jac.transpose() * hn * jac;
    // Curvature of p_hat in theta: d2 p_hat / dtheta2 = -s_e (cos, sin).
    hess_x[(2, 2)] += -se * (unit[0] * c + unit[1] * s);

    Ok(BarrierEval {
        h: n - (params.r_e + params.r_o),
        grad_x,
        hess_x,
        grad_o: -unit,
        hess_o: hn,
    })
}

/// A barrier family evaluated per object sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Barrier {
    Fov(FovEdge),
    Collision,
}

impl Barrier {
    pub fn value(&self, x: &RobotState, o: &ObjectState, params: &ModelParams) -> f64 {
        match self {
            Barrier::Fov(e) => fov_value(x, o, params, *e),
            Barrier::Collision => collision_value(x, o, params),
        }
    }

    pub fn evaluate(
        &self,
        x: &RobotState,
        o: &ObjectState,
        params: &ModelParams,
    ) -> Result<BarrierEval, BarrierError> {
        match self {
            Barrier::Fov(e) => Ok(fov_barrier(x, o, params, *e)),
            Barrier::Collision => collision_barrier(x, o, params),
        }
    }

    /// Values for every sample, written into `out`. Trigonometry of the
    /// robot heading is computed once.
    pub fn values_into(&self, x: &RobotState, samples: &[ObjectState], params: &ModelParams, out: &mut [f64]) {
        let (s, c) = x.theta.sin_cos();
        match self {
            Barrier::Fov(e) => {
                let (t, off) = fov_consts(params);
                let sg = e.sign();
                for (h, o) in out.iter_mut().zip(samples) {
                    let dx = o.q_x - x.p_x;
                    let dy = o.q_y - x.p_y;
                    *h = t * (c * dx + s * dy) - off + sg * (-s * dx + c * dy);
                }
            }
            Barrier::Collision => {
                let r = params.r_e + params.r_o;
                let cx = x.p_x + params.s_e * c;
                let cy = x.p_y + params.s_e * s;
                for (h, o) in out.iter_mut().zip(samples) {
                    let (dx, dy) = (cx - o.q_x, cy - o.q_y);
                    *h = (dx * dx + dy * dy).sqrt() - r;
                }
            }
        }
    }

    /// Essential lower bound `b` of the barrier over the workspace.
    ///
    /// The collision margin is never below `-(r_e + r_o)`. The FoV margin is
    /// unbounded below in the plane, so it is bounded over a disk of radius
    /// `workspace_radius` around the robot.
    pub fn essential_lower_bound(&self, params: &ModelParams) -> f64 {
        match self {
            Barrier::Collision => -(params.r_e + params.r_o),
            Barrier::Fov(_) => {
                let (t, off) = fov_consts(params);
                let r = params.workspace_radius;
                -(t * r + off + r)
            }
        }
    }
}

/// Belief barrier value and derivatives.
///
/// Belief-space derivatives are block sparse: only samples with non-zero
/// weight contribute, each with a 2-vector gradient and a 2x2 Hessian block.
#[derive(Debug, Clone, PartialEq)]
pub struct BcbfEval {
    pub h_tilde: f64,
    pub grad_x: Vector3<f64>,
    pub hess_x: Matrix3<f64>,
    /// `(sample index, w_i * dh_i/do)`, ascending by index.
    pub grad_b_blocks: Vec<(usize, Vector2<f64>)>,
    /// `(sample index, w_i * d2h_i/do2)`, ascending by index.
    pub hess_b_blocks: Vec<(usize, Matrix2<f64>)>,
    pub active_set: Vec<usize>,
}

impl BcbfEval {
    /// Accumulates from `(index, weight, eval)` triples of the active samples.
    pub fn from_active<I>(h_tilde: f64, active: I) -> Self
    where
        I: IntoIterator<Item = (usize, f64, BarrierEval)>,
    {
        let mut out = BcbfEval {
            h_tilde,
            grad_x: Vector3::zeros(),
            hess_x: Matrix3::zeros(),
            grad_b_blocks: Vec::new(),
            hess_b_blocks: Vec::new(),
            active_set: Vec::new(),
        };
        for (i, w, e) in active {
            out.grad_x += e.grad_x * w;
            out.hess_x += e.hess_x * w;
            out.grad_b_blocks.push((i, e.grad_o * w));
            out.hess_b_blocks.push((i, e.hess_o * w));
            out.active_set.push(i);
        }
        out
    }
}

/// Composes per-sample evaluations through the weights of `bound`.
pub fn compose_bcbf(evals: &[BarrierEval], bound: &BoundResult) -> Result<BcbfEval, BarrierError> {
    if evals.len() != bound.weights.len() {
        return Err(BarrierError::LengthMismatch { weights: bound.weights.len(), evals: evals.len() });
    }
    Ok(BcbfEval::from_active(
        bound.value,
        bound
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, &w)| (i, w, evals[i])),
    ))
}
