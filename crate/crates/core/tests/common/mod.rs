//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use bcbf::barriers::{compose_bcbf, Barrier, BarrierEval, FovEdge};
use bcbf::risk_bounds::{lower_bound, RiskMeasure, RiskSpec};
use bcbf::safety_filter::{CbfConstraint, FilterConfig, InputBox, QpSpec};
use bcbf::sde_models::{robot_input_matrix, ModelParams, ObjectState, RobotState};
use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector2, Vector3};
use rand::Rng;
use statrs::distribution::{Binomial, DiscreteCDF};

/// Descending copy of `y`.
fn descending(y: &[f64]) -> Vec<f64> {
    let mut v = y.to_vec();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// First `k` in `1..=n` with `P[Bin(n, 1 - tau) <= k - 1] >= 1 - delta`, by a
/// straight scan over the statrs CDF.
pub fn k_scan(n: usize, tau: f64, delta: f64) -> Option<usize> {
    let bin = Binomial::new(1.0 - tau, n as u64).unwrap();
    (1..=n).find(|&k| bin.cdf(k as u64 - 1) >= 1.0 - delta)
}

/// Lower bound computed directly from its closed form on a sorted copy.
pub fn bound_oracle(y: &[f64], spec: &RiskSpec) -> Option<f64> {
    let n = y.len();
    let eta = descending(y);
    let tau_eff = spec.tau - spec.ell;
    match spec.measure {
        RiskMeasure::Var => k_scan(n, tau_eff, spec.delta).map(|k| eta[k - 1]),
        RiskMeasure::Cvar | RiskMeasure::Expectation => {
            let tau = spec.tau;
            let eps = (-spec.delta.ln() / (2.0 * n as f64)).sqrt() + spec.ell;
            let b = spec.essential_lb;
            let nf = n as f64;
            if tau <= eps {
                return Some(b);
            }
            let k = (1..=n).find(|&k| k as f64 / nf - eps - 1.0 + tau >= 0.0)?;
            let tail: f64 = eta[k..].iter().sum::<f64>() / nf;
            Some((eps * b + (k as f64 / nf - eps - 1.0 + tau) * eta[k - 1] + tail) / tau)
        }
    }
}

/// Belief-barrier safety constraint from dense `2N` stacked objects.
pub fn dense_constraint(
    evals: &[BarrierEval],
    weights: &[f64],
    h_tilde: f64,
    x: &RobotState,
    params: &ModelParams,
    v: &Vector2<f64>,
    cfg: &FilterConfig,
) -> (Vector2<f64>, f64) {
    let n = evals.len();
    let mut grad_x = Vector3::zeros();
    let mut hess_x = Matrix3::zeros();
    let mut grad_b = DVector::zeros(2 * n);
    let mut hess_b = DMatrix::zeros(2 * n, 2 * n);
    for (i, (e, &w)) in evals.iter().zip(weights).enumerate() {
        grad_x += e.grad_x * w;
        hess_x += e.hess_x * w;
        grad_b.rows_mut(2 * i, 2).copy_from(&(e.grad_o * w));
        hess_b.view_mut((2 * i, 2 * i), (2, 2)).copy_from(&(e.hess_o * w));
    }
    let sig = Matrix3::from_diagonal(&params.sigma());
    let dd = DMatrix::from_diagonal(&DVector::from_fn(2 * n, |r, _| params.d()[r % 2]));
    let xi = DVector::from_fn(2 * n, |r, _| v[r % 2]);
    let lin = (grad_x.transpose() * robot_input_matrix(x)).transpose();
    let hx = h_tilde.max(cfg.h_min);
    let terms = 0.5 * (sig.transpose() * hess_x * sig).trace() - (grad_x.transpose() * sig).norm_squared() / hx
        + grad_b.dot(&xi)
        + 0.5 * (dd.transpose() * &hess_b * &dd).trace()
        - (grad_b.transpose() * &dd).norm_squared() / hx;
    (lin, -cfg.gamma * h_tilde.powi(3) - terms)
}

/// Smallest objective over the feasible points of a uniform grid with
/// spacing `step` covering the input box, with the minimizing point.
pub fn grid_qp(spec: &QpSpec, step: f64) -> Option<(f64, Vector2<f64>)> {
    let b = &spec.bounds;
    let nv = ((b.v_max - b.v_min) / step).round() as usize;
    let nw = ((b.omega_max - b.omega_min) / step).round() as usize;
    let q = spec.q;
    let mut best: Option<(f64, Vector2<f64>)> = None;
    for i in 0..=nv {
        let v = b.v_min + i as f64 * step;
        // Each constraint restricts omega on this row to a half-line.
        let (mut lo, mut hi) = (b.omega_min, b.omega_max);
        let mut empty = false;
        for c in &spec.constraints {
            let r = c.rhs - c.lin_u[0] * v;
            let a = c.lin_u[1];
            if a > 0.0 {
                lo = lo.max(r / a);
            } else if a < 0.0 {
                hi = hi.min(r / a);
            } else if r > 0.0 {
                empty = true;
            }
        }
        if empty || lo > hi {
            continue;
        }
        let j0 = ((lo - b.omega_min) / step).ceil().max(0.0) as usize;
        let j1 = (((hi - b.omega_min) / step).floor() as usize).min(nw);
        let dv = v - spec.u_ref[0];
        for j in j0..=j1 {
            let w = b.omega_min + j as f64 * step;
            let u = Vector2::new(v, w);
            if spec.constraints.iter().any(|c| c.lin_u.dot(&u) < c.rhs) {
                continue;
            }
            let dw = w - spec.u_ref[1];
            let f = q[(0, 0)] * dv * dv + 2.0 * q[(0, 1)] * dv * dw + q[(1, 1)] * dw * dw;
            if best.is_none_or(|(bf, _)| f < bf) {
                best = Some((f, u));
            }
        }
    }
    best
}

/// Random symmetric positive-definite 2x2 matrix with eigenvalues in [0.2, 5].
pub fn random_spd<R: Rng>(rng: &mut R) -> Matrix2<f64> {
    let a = rng.random_range(0.0..std::f64::consts::PI);
    let r = Matrix2::new(a.cos(), -a.sin(), a.sin(), a.cos());
    let d = Matrix2::from_diagonal(&Vector2::new(rng.random_range(0.2..5.0), rng.random_range(0.2..5.0)));
    let m = r * d * r.transpose();
    (m + m.transpose()) * 0.5
}

pub fn random_robot<R: Rng>(rng: &mut R) -> RobotState {
    RobotState::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-3.1..3.1))
}

/// An object sample ahead of the robot, inside the field of view.
pub fn object_in_view<R: Rng>(x: &RobotState, rng: &mut R) -> ObjectState {
    let dist = rng.random_range(1.0..4.0);
    let bearing = x.theta + rng.random_range(-0.2..0.2);
    ObjectState::new(x.p_x + dist * bearing.cos(), x.p_y + dist * bearing.sin())
}

pub fn random_edge<R: Rng>(rng: &mut R) -> FovEdge {
    if rng.random_bool(0.5) {
        FovEdge::Left
    } else {
        FovEdge::Right
    }
}

/// Central difference of `f` along every coordinate of `at`.
pub fn fd_gradient<const D: usize>(f: impl Fn(&[f64; D]) -> f64, at: [f64; D], step: f64) -> [f64; D] {
    let mut g = [0.0; D];
    for i in 0..D {
        let (mut p, mut m) = (at, at);
        p[i] += step;
        m[i] -= step;
        g[i] = (f(&p) - f(&m)) / (2.0 * step);
    }
    g
}

/// `|a - b| / max(|b|, 1)` over all entries, with `b` the reference.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = b.iter().map(|y| y * y).sum::<f64>().sqrt().max(1.0);
    diff / scale
}

/// Largest relative error of the analytic barrier derivatives against
/// central differences (of the value for gradients, of the analytic
/// gradient for Hessians).
pub fn barrier_fd_error(barrier: Barrier, x: &RobotState, o: &ObjectState, params: &ModelParams) -> f64 {
    const H: f64 = 1e-6;
    let e = barrier.evaluate(x, o, params).unwrap();
    let xv = [x.p_x, x.p_y, x.theta];
    let ov = [o.q_x, o.q_y];
    let at_x = |v: &[f64; 3]| RobotState::new(v[0], v[1], v[2]);
    let at_o = |v: &[f64; 2]| ObjectState::new(v[0], v[1]);

    let gx = fd_gradient(|v| barrier.value(&at_x(v), o, params), xv, H);
    let go = fd_gradient(|v| barrier.value(x, &at_o(v), params), ov, H);
    let mut err = rel_err(e.grad_x.as_slice(), &gx).max(rel_err(e.grad_o.as_slice(), &go));
    for r in 0..3 {
        let row = fd_gradient(|v| barrier.evaluate(&at_x(v), o, params).unwrap().grad_x[r], xv, H);
        err = err.max(rel_err(e.hess_x.row(r).transpose().as_slice(), &row));
    }
    for r in 0..2 {
        let row = fd_gradient(|v| barrier.evaluate(x, &at_o(v), params).unwrap().grad_o[r], ov, H);
        err = err.max(rel_err(e.hess_o.row(r).transpose().as_slice(), &row));
    }
    err
}

/// Relative error of the composed belief-barrier derivatives against
/// central differences of the bound itself. `None` when a perturbation
/// changes which samples are active (a tie in the ordering), where the bound
/// is not differentiable.
pub fn bcbf_fd_error(
    barrier: Barrier,
    x: &RobotState,
    objs: &[ObjectState],
    params: &ModelParams,
    spec: &RiskSpec,
) -> Option<f64> {
    const H: f64 = 1e-6;
    let compose = |x: &RobotState, objs: &[ObjectState]| {
        let evals: Vec<BarrierEval> = objs.iter().map(|o| barrier.evaluate(x, o, params).unwrap()).collect();
        let hs: Vec<f64> = evals.iter().map(|e| e.h).collect();
        let bound = lower_bound(&hs, spec).unwrap();
        let active = bound.active_set();
        (compose_bcbf(&evals, &bound).unwrap(), active)
    };
    let (base, active) = compose(x, objs);
    let xv = [x.p_x, x.p_y, x.theta];
    let at_x = |v: &[f64; 3]| RobotState::new(v[0], v[1], v[2]);

    // Tie guard on every perturbation used below.
    for i in 0..3 {
        for s in [-H, H] {
            let mut v = xv;
            v[i] += s;
            if compose(&at_x(&v), objs).1 != active {
                return None;
            }
        }
    }
    let gx = fd_gradient(|v| compose(&at_x(v), objs).0.h_tilde, xv, H);
    let mut err = rel_err(base.grad_x.as_slice(), &gx);
    for r in 0..3 {
        let row = fd_gradient(|v| compose(&at_x(v), objs).0.grad_x[r], xv, H);
        err = err.max(rel_err(base.hess_x.row(r).transpose().as_slice(), &row));
    }
    for (slot, &i) in active.iter().enumerate() {
        let at_o = |v: &[f64; 2]| {
            let mut moved = objs.to_vec();
            moved[i] = ObjectState::new(v[0], v[1]);
            moved
        };
        let ov = [objs[i].q_x, objs[i].q_y];
        for j in 0..2 {
            for s in [-H, H] {
                let mut v = ov;
                v[j] += s;
                if compose(x, &at_o(&v)).1 != active {
                    return None;
                }
            }
        }
        let go = fd_gradient(|v| compose(x, &at_o(v)).0.h_tilde, ov, H);
        err = err.max(rel_err(base.grad_b_blocks[slot].1.as_slice(), &go));
        for r in 0..2 {
            let row = fd_gradient(|v| compose(x, &at_o(v)).0.grad_b_blocks[slot].1[r], ov, H);
            err = err.max(rel_err(base.hess_b_blocks[slot].1.row(r).transpose().as_slice(), &row));
        }
    }
    Some(err)
}

/// A feasible two-input QP on the box `[-1, 1]^2` with up to three safety
/// constraints, all satisfied with some margin at a common interior point.
pub fn random_qp<R: Rng>(rng: &mut R) -> QpSpec {
    let u0 = Vector2::new(rng.random_range(-0.8..0.8), rng.random_range(-0.8..0.8));
    let m = rng.random_range(0..=3);
    let constraints = (0..m)
        .map(|_| {
            let a = rng.random_range(-3.2..3.2);
            let lin = Vector2::new(f64::cos(a), f64::sin(a)) * rng.random_range(0.1..5.0);
            let margin = rng.random_range(0.0..0.3) * lin.norm();
            CbfConstraint::new(lin, lin.dot(&u0) - margin)
        })
        .collect();
    QpSpec {
        q: random_spd(rng),
        u_ref: Vector2::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
        bounds: InputBox { v_min: -1.0, v_max: 1.0, omega_min: -1.0, omega_max: 1.0 },
        constraints,
    }
}

/// Objective slack allowed between the exact optimum `u_star` and a grid
/// search of spacing `step`.
///
/// Any closed disk of radius `step / sqrt(2)` contains a grid point. Near
/// `u_star` the feasible set is a wedge of half-angle `alpha` cut by the
/// constraints active there, and such a disk fits inside it within
/// `d = (step / sqrt(2)) (1 + 1 / sin(alpha))` of the vertex. Over that
/// distance the objective grows by at most `|grad f| d + lambda_max(Q) d^2`.
pub fn grid_tolerance(spec: &QpSpec, u_star: &Vector2<f64>, step: f64) -> f64 {
    let b = &spec.bounds;
    let mut normals: Vec<Vector2<f64>> = spec
        .constraints
        .iter()
        .filter(|c| c.lin_u.dot(u_star) - c.rhs <= 1e-9 * c.lin_u.norm().max(c.rhs.abs()).max(1.0))
        .map(|c| c.lin_u.normalize())
        .collect();
    let faces = [
        (u_star[0] - b.v_min, Vector2::new(1.0, 0.0)),
        (b.v_max - u_star[0], Vector2::new(-1.0, 0.0)),
        (u_star[1] - b.omega_min, Vector2::new(0.0, 1.0)),
        (b.omega_max - u_star[1], Vector2::new(0.0, -1.0)),
    ];
    normals.extend(faces.iter().filter(|(s, _)| *s <= 1e-9).map(|(_, n)| *n));
    // The narrowest wedge between two active inward normals n1, n2 has
    // interior angle pi - angle(n1, n2).
    let mut half_angle = std::f64::consts::FRAC_PI_2;
    for i in 0..normals.len() {
        for j in i + 1..normals.len() {
            let between = normals[i].dot(&normals[j]).clamp(-1.0, 1.0).acos();
            half_angle = half_angle.min((std::f64::consts::PI - between) / 2.0);
        }
    }
    let rho = step / std::f64::consts::SQRT_2;
    let d = rho * (1.0 + 1.0 / half_angle.sin());
    let grad = 2.0 * spec.q * (u_star - spec.u_ref);
    let lmax = spec.q.symmetric_eigenvalues().amax();
    grad.norm() * d + lmax * d * d
}
