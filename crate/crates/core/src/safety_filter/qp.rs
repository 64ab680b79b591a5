//! Exact solver for the two-input safety QP.
//!
//! ```text
//! minimize    (u - u_ref)' Q (u - u_ref)
//! subject to  a_j' u >= r_j          (safety constraints)
//!             lo <= u <= hi          (input box)
//! ```
//!
//! With two decision variables the optimum is pinned by at most two active
//! constraints, so every subset of size 0, 1 or 2 is solved as an equality
//! QP and the best primal-feasible candidate is returned. For a handful of
//! constraints that is a few dozen 2x2 solves.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const FEAS_TOL: f64 = 1e-11;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("weight matrix is not symmetric positive definite")]
    NotPositiveDefinite,
    #[error("input box has lo > hi")]
    InvalidBox,
    #[error("no input in the box satisfies every safety constraint")]
    Infeasible,
}

/// Linear safety constraint `lin_u . u >= rhs`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfConstraint {
    pub lin_u: Vector2<f64>,
    pub rhs: f64,
}

impl CbfConstraint {
    pub fn new(lin_u: Vector2<f64>, rhs: f64) -> Self {
        Self { lin_u, rhs }
    }

    /// `lin_u . u - rhs`; non-negative when satisfied.
    pub fn slack(&self, u: &Vector2<f64>) -> f64 {
        self.lin_u.dot(u) - self.rhs
    }
}

/// Per-input bounds on `(u_v, u_omega)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputBox {
    pub v_min: f64,
    pub v_max: f64,
    pub omega_min: f64,
    pub omega_max: f64,
}

impl Default for InputBox {
    fn default() -> Self {
        Self { v_min: -2.0, v_max: 2.0, omega_min: -2.0, omega_max: 2.0 }
    }
}

impl InputBox {
    pub fn lo(&self) -> Vector2<f64> {
        Vector2::new(self.v_min, self.omega_min)
    }

    pub fn hi(&self) -> Vector2<f64> {
        Vector2::new(self.v_max, self.omega_max)
    }

    pub fn clamp(&self, u: &Vector2<f64>) -> Vector2<f64> {
        Vector2::new(u[0].clamp(self.v_min, self.v_max), u[1].clamp(self.omega_min, self.omega_max))
    }

    pub fn validate(&self) -> Result<(), QpError> {
        if self.v_min <= self.v_max && self.omega_min <= self.omega_max {
            Ok(())
        } else {
            Err(QpError::InvalidBox)
        }
    }

    /// The four faces as `a' u >= r`: v_min, v_max, omega_min, omega_max.
    fn faces(&self) -> [CbfConstraint; 4] {
        [
            CbfConstraint::new(Vector2::new(1.0, 0.0), self.v_min),
            CbfConstraint::new(Vector2::new(-1.0, 0.0), -self.v_max),
            CbfConstraint::new(Vector2::new(0.0, 1.0), self.omega_min),
            CbfConstraint::new(Vector2::new(0.0, -1.0), -self.omega_max),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSpec {
    pub q: Matrix2<f64>,
    pub u_ref: Vector2<f64>,
    pub bounds: InputBox,
    pub constraints: Vec<CbfConstraint>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub u: Vector2<f64>,
    pub objective: f64,
    /// Multipliers of `spec.constraints`, in order.
    pub cbf_multipliers: Vec<f64>,
    /// Multipliers of the box faces v_min, v_max, omega_min, omega_max.
    pub box_multipliers: [f64; 4],
}

/// Largest violations of the KKT conditions at a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity.max(self.primal).max(self.dual).max(self.complementarity)
    }
}

impl QpSpec {
    fn objective(&self, u: &Vector2<f64>) -> f64 {
        let e = u - self.u_ref;
        e.dot(&(self.q * e))
    }

    fn all_constraints(&self) -> Vec<CbfConstraint> {
        let mut all = self.constraints.clone();
        all.extend(self.bounds.faces());
        all
    }

    fn validate(&self) -> Result<(), QpError> {
        self.bounds.validate()?;
        let q = self.q;
        let sym = (q[(0, 1)] - q[(1, 0)]).abs() <= 1e-12 * q.abs().max();
        if !sym || q.iter().any(|v| !v.is_finite()) || !(q[(0, 0)] > 0.0 && q.determinant() > 0.0) {
            return Err(QpError::NotPositiveDefinite);
        }
        Ok(())
    }

    /// KKT residuals of `sol` for this problem.
    pub fn kkt_residuals(&self, sol: &QpSolution) -> KktResiduals {
        let all = self.all_constraints();
        let lambdas: Vec<f64> = sol.cbf_multipliers.iter().chain(&sol.box_multipliers).copied().collect();
        let mut grad = 2.0 * self.q * (sol.u - self.u_ref);
        let mut r = KktResiduals::default();
        for (c, &l) in all.iter().zip(&lambdas) {
            grad -= c.lin_u * l;
            let s = c.slack(&sol.u);
            r.primal = r.primal.max(-s);
            r.dual = r.dual.max(-l);
            r.complementarity = r.complementarity.max((l * s).abs());
        }
        r.stationarity = grad.amax();
        r
    }
}

/// Minimizer of the safety QP.
pub fn solve_qp(spec: &QpSpec) -> Result<QpSolution, QpError> {
    spec.validate()?;
    let all = spec.all_constraints();
    let m = all.len();
    let q_inv = spec.q.try_inverse().ok_or(QpError::NotPositiveDefinite)?;
    let scale = |c: &CbfConstraint| FEAS_TOL * (1.0 + c.rhs.abs() + c.lin_u.amax());
    let feasible = |u: &Vector2<f64>| all.iter().all(|c| c.slack(u) >= -scale(c));

    let mut best: Option<(f64, Vector2<f64>, Vec<(usize, f64)>)> = None;
    let mut consider = |u: Vector2<f64>, active: Vec<(usize, f64)>| {
        if !u.iter().all(|v| v.is_finite()) || !feasible(&u) {
            return;
        }
        let obj = spec.objective(&u);
        let better = match &best {
            None => true,
            // Prefer smaller active sets on ties; they are enumerated first.
            Some((b, _, _)) => obj < *b - 1e-14 * (1.0 + b.abs()),
        };
        if better {
            best = Some((obj, u, active));
        }
    };

    consider(spec.u_ref, Vec::new());

    for i in 0..m {
        let a = all[i].lin_u;
        let qa = q_inv * a;
        let denom = a.dot(&qa);
        if denom <= 0.0 {
            continue;
        }
        let lam = 2.0 * (all[i].rhs - a.dot(&spec.u_ref)) / denom;
        let u = snap_to_faces(spec, spec.u_ref + qa * (0.5 * lam), &[i]);
        consider(u, vec![(i, lam)]);
    }

    for i in 0..m {
        for j in (i + 1)..m {
            let a = Matrix2::from_rows(&[all[i].lin_u.transpose(), all[j].lin_u.transpose()]);
            let det = a.determinant();
            if det.abs() <= 1e-12 * all[i].lin_u.norm() * all[j].lin_u.norm() {
                continue;
            }
            let Some(a_inv) = a.try_inverse() else { continue };
            let u = snap_to_faces(spec, a_inv * Vector2::new(all[i].rhs, all[j].rhs), &[i, j]);
            // 2Q(u - u_ref) = A' lambda
            let lam = a_inv.transpose() * (2.0 * spec.q * (u - spec.u_ref));
            consider(u, vec![(i, lam[0]), (j, lam[1])]);
        }
    }

    let (objective, u, active) = best.ok_or(QpError::Infeasible)?;
    let mut lambdas = vec![0.0; m];
    for (i, l) in active {
        lambdas[i] = l;
    }
    let n_cbf = spec.constraints.len();
    let mut box_multipliers = [0.0; 4];
    box_multipliers.copy_from_slice(&lambdas[n_cbf..]);
    Ok(QpSolution { u, objective, cbf_multipliers: lambdas[..n_cbf].to_vec(), box_multipliers })
}

/// Puts coordinates pinned by active box faces exactly on the bound.
fn snap_to_faces(spec: &QpSpec, mut u: Vector2<f64>, active: &[usize]) -> Vector2<f64> {
    let b = &spec.bounds;
    for &i in active {
        match i.checked_sub(spec.constraints.len()) {
            Some(0) => u[0] = b.v_min,
            Some(1) => u[0] = b.v_max,
            Some(2) => u[1] = b.omega_min,
            Some(3) => u[1] = b.omega_max,
            _ => {}
        }
    }
    u
}

/// Box point maximizing the smallest normalized constraint slack.
///
/// Used when the QP is infeasible: the result violates the safety
/// constraints as little as the input box allows. Among equally good points
/// the one nearest `u_ref` (in the `Q` metric) wins.
pub fn least_infeasible(spec: &QpSpec) -> Vector2<f64> {
    let lo = spec.bounds.lo();
    let hi = spec.bounds.hi();
    let normed: Vec<CbfConstraint> = spec
        .constraints
        .iter()
        .filter_map(|c| {
            let n = c.lin_u.norm();
            (n > 0.0).then(|| CbfConstraint::new(c.lin_u / n, c.rhs / n))
        })
        .collect();
    if normed.is_empty() {
        return spec.bounds.clamp(&spec.u_ref);
    }
    let worst = |u: &Vector2<f64>| normed.iter().map(|c| c.slack(u)).fold(f64::INFINITY, f64::min);

    let mut cands = vec![
        Vector2::new(lo[0], lo[1]),
        Vector2::new(lo[0], hi[1]),
        Vector2::new(hi[0], lo[1]),
        Vector2::new(hi[0], hi[1]),
        spec.bounds.clamp(&spec.u_ref),
    ];
    // Points on box edges where two constraints tie, and where a constraint
    // is parallel to an edge (its slack is constant along it).
    for (i, ci) in normed.iter().enumerate() {
        for cj in normed.iter().skip(i + 1) {
            let a = ci.lin_u - cj.lin_u;
            let r = ci.rhs - cj.rhs;
            push_edge_crossings(&mut cands, &a, r, &lo, &hi);
        }
    }
    for c in &normed {
        if c.lin_u[0].abs() < 1e-15 || c.lin_u[1].abs() < 1e-15 {
            let p = spec.bounds.clamp(&spec.u_ref);
            let v = if c.lin_u[0].abs() < 1e-15 {
                Vector2::new(p[0], if c.lin_u[1] > 0.0 { hi[1] } else { lo[1] })
            } else {
                Vector2::new(if c.lin_u[0] > 0.0 { hi[0] } else { lo[0] }, p[1])
            };
            cands.push(v);
        }
    }

    let mut best = cands[0];
    let mut best_key = (worst(&best), -spec.objective(&best));
    for u in cands.into_iter().skip(1) {
        let key = (worst(&u), -spec.objective(&u));
        let tol = 1e-12;
        if key.0 > best_key.0 + tol || ((key.0 - best_key.0).abs() <= tol && key.1 > best_key.1) {
            best = u;
            best_key = key;
        }
    }
    best
}

fn push_edge_crossings(out: &mut Vec<Vector2<f64>>, a: &Vector2<f64>, r: f64, lo: &Vector2<f64>, hi: &Vector2<f64>) {
    // a' u = r intersected with u0 in {lo0, hi0} and u1 in {lo1, hi1}.
    if a[1].abs() > 1e-15 {
        for u0 in [lo[0], hi[0]] {
            let u1 = (r - a[0] * u0) / a[1];
            if u1 >= lo[1] && u1 <= hi[1] {
                out.push(Vector2::new(u0, u1));
            }
        }
    }
    if a[0].abs() > 1e-15 {
        for u1 in [lo[1], hi[1]] {
            let u0 = (r - a[1] * u1) / a[0];
            if u0 >= lo[0] && u0 <= hi[0] {
                out.push(Vector2::new(u0, u1));
            }
        }
    }
}
