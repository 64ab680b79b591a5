//! Sample-based lower confidence bounds on lower-tail risk measures.
//!
//! Given `N` i.i.d. draws of a scalar `Y`, the bounds here under-estimate
//! `VaR_tau(Y)`, `CVaR_tau(Y)` or `E[Y]` with probability at least `1 - delta`
//! over the draw. Risk is measured on the *lower* tail: small values of `Y`
//! are the bad ones (a barrier margin, a distance to an obstacle).
//!
//! Samples are ranked in descending order, `eta^1 >= ... >= eta^N`, with ties
//! broken by ascending original index.
//!
//! * VaR: `eta^k`, where `k` is the smallest index with
//!   `Bin(k - 1; N, 1 - tau) >= 1 - delta`.
//! * CVaR: with DKW slack `eps = sqrt(-ln(delta) / 2N)` and `k` the smallest
//!   index with `k/N - eps - 1 + tau >= 0`,
//!
//!   ```text
//!   (1/tau) [ eps*b + (k/N - eps - 1 + tau) eta^k + (1/N) sum_{i>k} eta^i ]
//!   ```
//!
//!   where `b` is an essential lower bound of `Y`.
//! * Expectation: the CVaR bound at `tau = 1`.
//!
//! The `ell`-robust variants tolerate a one-sided Kolmogorov-Smirnov shift of
//! at most `ell` between the sampled and the true distribution: VaR moves to
//! level `tau - ell`, CVaR widens its slack to `eps + ell`.
//!
//! Every bound is an affine function of the samples with non-negative weights
//! summing (together with the coefficient on `b`) to one. [`BoundResult`]
//! exposes those weights so that callers can differentiate through the bound.

mod binomial;
mod empirical;
mod guarantee;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use binomial::binomial_cdf;
pub use empirical::{empirical_cvar, empirical_var};
pub use guarantee::{check_guarantee, GaussianTruth, GuaranteeReport};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RiskError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid risk spec: {0}")]
    InvalidSpec(String),
    #[error("insufficient samples: bound requires N >= {required}, got {got}")]
    InsufficientSamples { required: usize, got: usize },
    #[error("essential lower bound {lb} violated by sample {sample}")]
    EssentialLbViolated { lb: f64, sample: f64 },
    #[error("no order statistic satisfies the binomial condition for N = {n}")]
    NoValidIndex { n: usize },
    #[error("samples must be finite")]
    NonFinite,
}

/// Which lower-tail risk measure to bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RiskMeasure {
    Var,
    Cvar,
    Expectation,
}

/// Sign convention for the robust CVaR slack.
///
/// `Conservative` widens the DKW slack to `eps + ell`, which makes the robust
/// bound never exceed the nominal one. `Literal` uses `max(eps - ell, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SlackSign {
    #[default]
    Conservative,
    Literal,
}

/// Risk measure, level, confidence, shift budget and essential lower bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskSpec {
    pub measure: RiskMeasure,
    /// Risk level; forced to 1 for [`RiskMeasure::Expectation`].
    pub tau: f64,
    /// The bound holds with probability at least `1 - delta`.
    pub delta: f64,
    /// One-sided KS shift budget, `0 <= ell < tau`.
    pub ell: f64,
    /// `b` with `P[Y >= b] = 1`; unused by VaR.
    pub essential_lb: f64,
    pub robust_slack_sign: SlackSign,
}

impl RiskSpec {
    pub fn var(tau: f64, delta: f64) -> Self {
        Self {
            measure: RiskMeasure::Var,
            tau,
            delta,
            ell: 0.0,
            essential_lb: f64::NEG_INFINITY,
            robust_slack_sign: SlackSign::Conservative,
        }
    }

    pub fn cvar(tau: f64, delta: f64, essential_lb: f64) -> Self {
        Self {
            measure: RiskMeasure::Cvar,
            tau,
            delta,
            ell: 0.0,
            essential_lb,
            robust_slack_sign: SlackSign::Conservative,
        }
    }

    pub fn expectation(delta: f64, essential_lb: f64) -> Self {
        Self {
            measure: RiskMeasure::Expectation,
            tau: 1.0,
            delta,
            ell: 0.0,
            essential_lb,
            robust_slack_sign: SlackSign::Conservative,
        }
    }

    pub fn with_ell(mut self, ell: f64) -> Self {
        self.ell = ell;
        self
    }

    pub fn with_essential_lb(mut self, lb: f64) -> Self {
        self.essential_lb = lb;
        self
    }

    pub fn with_slack_sign(mut self, sign: SlackSign) -> Self {
        self.robust_slack_sign = sign;
        self
    }

    pub fn validate(&self) -> Result<(), RiskError> {
        let bad = |msg: String| Err(RiskError::InvalidSpec(msg));
        let (tau, delta, ell) = (self.tau, self.delta, self.ell);
        if !(tau > 0.0 && tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {tau}"));
        }
        match self.measure {
            RiskMeasure::Var => {
                if tau >= 1.0 {
                    return bad(format!("VaR requires tau < 1, got {tau}"));
                }
                if !(delta > 0.0 && delta < 1.0) {
                    return bad(format!("VaR requires delta in (0, 1), got {delta}"));
                }
            }
            RiskMeasure::Cvar | RiskMeasure::Expectation => {
                if self.measure == RiskMeasure::Expectation && tau != 1.0 {
                    return bad(format!("expectation bound is CVaR at tau = 1, got tau = {tau}"));
                }
                if !(delta > 0.0 && delta <= 0.5) {
                    return bad(format!("CVaR requires delta in (0, 0.5], got {delta}"));
                }
                if !self.essential_lb.is_finite() {
                    return bad("CVaR requires a finite essential lower bound".into());
                }
            }
        }
        if !(ell >= 0.0 && ell < tau) {
            return bad(format!("shift budget must satisfy 0 <= ell < tau, got {ell}"));
        }
        Ok(())
    }

    /// Level actually used by the order-statistic search (`tau - ell` for VaR).
    pub fn var_level(&self) -> f64 {
        self.tau - self.ell
    }

    /// Smallest `N` for which the bound is defined.
    pub fn min_samples(&self) -> Result<usize, RiskError> {
        self.validate()?;
        let ln_delta = self.delta.ln();
        let n = match self.measure {
            RiskMeasure::Var => (ln_delta / (1.0 - self.var_level()).ln()).ceil(),
            RiskMeasure::Cvar | RiskMeasure::Expectation => {
                (-0.5 * ln_delta / (self.tau * self.tau)).ceil()
            }
        };
        Ok((n as usize).max(1))
    }

    /// Short human-readable tag such as `VaR_0.1`, `CVaR_0.1^0.05` or `E`.
    pub fn label(&self) -> String {
        let base = match self.measure {
            RiskMeasure::Var => format!("VaR_{}", self.tau),
            RiskMeasure::Cvar => format!("CVaR_{}", self.tau),
            RiskMeasure::Expectation => "E".to_string(),
        };
        if self.ell > 0.0 {
            format!("{base}^{}", self.ell)
        } else {
            base
        }
    }
}

/// Samples ranked in descending order with a stable tie-break.
#[derive(Debug, Clone, PartialEq)]
pub struct OrderedSamples {
    /// `values[0]` is the largest sample.
    pub values: Vec<f64>,
    /// `perm[i]` is the original index of `values[i]`.
    pub perm: Vec<usize>,
}

impl OrderedSamples {
    pub fn new(samples: &[f64]) -> Result<Self, RiskError> {
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(RiskError::NonFinite);
        }
        let mut perm: Vec<usize> = (0..samples.len()).collect();
        perm.sort_by(|&a, &b| descending(samples, a, b));
        let values = perm.iter().map(|&i| samples[i]).collect();
        Ok(Self { values, perm })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// One-based order statistic `eta^k`.
    pub fn eta(&self, k: usize) -> f64 {
        self.values[k - 1]
    }
}

#[inline]
fn descending(samples: &[f64], a: usize, b: usize) -> std::cmp::Ordering {
    samples[b].total_cmp(&samples[a]).then(a.cmp(&b))
}

/// A lower bound together with its affine decomposition over the samples.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundResult {
    pub value: f64,
    /// Weight of each sample, indexed by its original position.
    pub weights: Vec<f64>,
    /// Coefficient multiplying the essential lower bound.
    pub b_coeff: f64,
    /// One-based order-statistic index `k`; 0 when the CVaR bound saturates at `b`.
    pub k_index: usize,
    /// Effective DKW slack (0 for VaR).
    pub epsilon_eff: f64,
}

impl BoundResult {
    /// Indices with non-zero weight, ascending.
    pub fn active_set(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    /// `sum_i w_i y_i + b_coeff * b`.
    pub fn recompose(&self, samples: &[f64], essential_lb: f64) -> f64 {
        let dot: f64 = self.weights.iter().zip(samples).map(|(w, y)| w * y).sum();
        if self.b_coeff == 0.0 {
            dot
        } else {
            dot + self.b_coeff * essential_lb
        }
    }
}

/// Smallest one-based `k` with `Bin(k - 1; n, 1 - tau_eff) >= 1 - delta`.
pub fn var_k_index(n: usize, tau_eff: f64, delta: f64) -> Result<usize, RiskError> {
    if n == 0 {
        return Err(RiskError::NoValidIndex { n });
    }
    if !(tau_eff > 0.0 && tau_eff < 1.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(RiskError::InvalidArgument(format!(
            "need tau in (0, 1) and delta in (0, 1), got tau = {tau_eff}, delta = {delta}"
        )));
    }
    let target = 1.0 - delta;
    binomial::cdf_prefixes(n as u64, 1.0 - tau_eff)
        .take(n)
        .position(|cdf| cdf >= target)
        .map(|j| j + 1)
        .ok_or(RiskError::NoValidIndex { n })
}

/// DKW slack `sqrt(-ln(delta) / 2N)`.
pub fn dkw_epsilon(n: usize, delta: f64) -> f64 {
    (-delta.ln() / (2.0 * n as f64)).sqrt()
}

/// Precomputed bound evaluator for a fixed spec and sample count.
///
/// The order-statistic index depends only on `(N, spec)`, so the control
/// loop builds one of these per barrier and reuses it every step.
#[derive(Debug, Clone)]
pub struct RiskEstimator {
    spec: RiskSpec,
    n: usize,
    plan: Plan,
}

#[derive(Debug, Clone, Copy)]
enum Plan {
    Var { k: usize },
    Cvar { k: usize, eps_eff: f64, coeff_k: f64 },
    Saturated { eps_eff: f64 },
}

impl RiskEstimator {
    pub fn new(spec: RiskSpec, n: usize) -> Result<Self, RiskError> {
        let required = spec.min_samples()?;
        if n < required {
            return Err(RiskError::InsufficientSamples { required, got: n });
        }
        let plan = match spec.measure {
            RiskMeasure::Var => Plan::Var { k: var_k_index(n, spec.var_level(), spec.delta)? },
            RiskMeasure::Cvar | RiskMeasure::Expectation => cvar_plan(&spec, n),
        };
        Ok(Self { spec, n, plan })
    }

    pub fn spec(&self) -> &RiskSpec {
        &self.spec
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Order-statistic index `k` used by this estimator (0 if saturated).
    pub fn k_index(&self) -> usize {
        match self.plan {
            Plan::Var { k } | Plan::Cvar { k, .. } => k,
            Plan::Saturated { .. } => 0,
        }
    }

    pub fn epsilon_eff(&self) -> f64 {
        match self.plan {
            Plan::Var { .. } => 0.0,
            Plan::Cvar { eps_eff, .. } | Plan::Saturated { eps_eff } => eps_eff,
        }
    }

    /// Evaluates the bound and its weights.
    pub fn evaluate(&self, samples: &[f64]) -> Result<BoundResult, RiskError> {
        let mut weights = vec![0.0; samples.len()];
        let (value, b_coeff) = self.evaluate_into(samples, &mut weights)?;
        Ok(BoundResult {
            value,
            weights,
            b_coeff,
            k_index: self.k_index(),
            epsilon_eff: self.epsilon_eff(),
        })
    }

    /// Evaluates the bound, writing sample weights into `weights`, and
    /// returns `(value, b_coeff)`. Avoids allocation in the control loop.
    pub fn evaluate_into(&self, samples: &[f64], weights: &mut [f64]) -> Result<(f64, f64), RiskError> {
        if samples.len() != self.n || weights.len() != self.n {
            return Err(RiskError::InvalidArgument(format!(
                "estimator built for N = {}, got {} samples and {} weights",
                self.n,
                samples.len(),
                weights.len()
            )));
        }
        let mut min = f64::INFINITY;
        for &s in samples {
            if !s.is_finite() {
                return Err(RiskError::NonFinite);
            }
            min = min.min(s);
        }
        weights.iter_mut().for_each(|w| *w = 0.0);

        if self.spec.measure != RiskMeasure::Var && min < self.spec.essential_lb {
            return Err(RiskError::EssentialLbViolated { lb: self.spec.essential_lb, sample: min });
        }

        match self.plan {
            Plan::Var { k } => {
                let mut idx: Vec<usize> = (0..self.n).collect();
                idx.select_nth_unstable_by(k - 1, |&a, &b| descending(samples, a, b));
                let chosen = idx[k - 1];
                weights[chosen] = 1.0;
                Ok((samples[chosen], 0.0))
            }
            Plan::Saturated { .. } => Ok((self.spec.essential_lb, 1.0)),
            Plan::Cvar { k, eps_eff, coeff_k } => {
                let tau = self.spec.tau;
                let nf = self.n as f64;
                let mut idx: Vec<usize> = (0..self.n).collect();
                idx.select_nth_unstable_by(k - 1, |&a, &b| descending(samples, a, b));
                // Positions after k-1 hold the N-k smallest samples.
                let w_tail = 1.0 / (nf * tau);
                let mut tail = binomial::CompensatedSum::default();
                for &i in &idx[k..] {
                    weights[i] = w_tail;
                    tail.add(samples[i]);
                }
                let kth = idx[k - 1];
                let w_k = coeff_k / tau;
                weights[kth] = w_k;
                let b_coeff = eps_eff / tau;
                let value = (eps_eff * self.spec.essential_lb + coeff_k * samples[kth] + tail.value() / nf) / tau;
                Ok((value, b_coeff))
            }
        }
    }
}

fn cvar_plan(spec: &RiskSpec, n: usize) -> Plan {
    let eps = dkw_epsilon(n, spec.delta);
    let eps_eff = match spec.robust_slack_sign {
        SlackSign::Conservative => eps + spec.ell,
        SlackSign::Literal => (eps - spec.ell).max(0.0),
    };
    let tau = spec.tau;
    if tau - eps_eff <= 0.0 {
        return Plan::Saturated { eps_eff };
    }
    let nf = n as f64;
    let slack = |k: usize| k as f64 / nf - eps_eff - 1.0 + tau;
    // Ceiling guess, then settle on the literal smallest index satisfying the condition.
    let mut k = ((nf * (1.0 - tau + eps_eff)).ceil() as usize).clamp(1, n);
    while k > 1 && slack(k - 1) >= 0.0 {
        k -= 1;
    }
    while k < n && slack(k) < 0.0 {
        k += 1;
    }
    Plan::Cvar { k, eps_eff, coeff_k: slack(k).max(0.0) }
}

/// Lower bound on `VaR_tau` (level `tau - ell` when robust).
pub fn var_lower_bound(samples: &[f64], spec: &RiskSpec) -> Result<BoundResult, RiskError> {
    if spec.measure != RiskMeasure::Var {
        return Err(RiskError::InvalidSpec("var_lower_bound requires a VaR spec".into()));
    }
    RiskEstimator::new(*spec, samples.len())?.evaluate(samples)
}

/// Lower bound on `CVaR_tau`.
pub fn cvar_lower_bound(samples: &[f64], spec: &RiskSpec) -> Result<BoundResult, RiskError> {
    if spec.measure != RiskMeasure::Cvar {
        return Err(RiskError::InvalidSpec("cvar_lower_bound requires a CVaR spec".into()));
    }
    RiskEstimator::new(*spec, samples.len())?.evaluate(samples)
}

/// Lower bound on the mean: the CVaR bound at `tau = 1`.
pub fn expectation_lower_bound(samples: &[f64], spec: &RiskSpec) -> Result<BoundResult, RiskError> {
    if spec.measure != RiskMeasure::Expectation {
        return Err(RiskError::InvalidSpec(
            "expectation_lower_bound requires an expectation spec".into(),
        ));
    }
    RiskEstimator::new(*spec, samples.len())?.evaluate(samples)
}

/// Dispatches on `spec.measure`.
pub fn lower_bound(samples: &[f64], spec: &RiskSpec) -> Result<BoundResult, RiskError> {
    RiskEstimator::new(*spec, samples.len())?.evaluate(samples)
}
