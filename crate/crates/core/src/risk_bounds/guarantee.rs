//! Monte Carlo check of the `1 - delta` coverage of the bounds against a
//! Gaussian with closed-form risk values.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal as StatNormal};

use super::{RiskError, RiskEstimator, RiskMeasure, RiskSpec};
use crate::sde_models::stream;

/// `N(mu, sigma^2)` with exact lower-tail risk values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianTruth {
    pub mu: f64,
    pub sigma: f64,
}

impl GaussianTruth {
    pub fn new(mu: f64, sigma: f64) -> Result<Self, RiskError> {
        if !(mu.is_finite() && sigma > 0.0 && sigma.is_finite()) {
            return Err(RiskError::InvalidArgument(format!("need finite mu and sigma > 0, got ({mu}, {sigma})")));
        }
        Ok(Self { mu, sigma })
    }

    fn std() -> StatNormal {
        StatNormal::standard()
    }

    /// `mu + sigma * Phi^-1(tau)`.
    pub fn var(&self, tau: f64) -> f64 {
        self.mu + self.sigma * Self::std().inverse_cdf(tau)
    }

    /// `mu - sigma * phi(Phi^-1(tau)) / tau`.
    pub fn cvar(&self, tau: f64) -> f64 {
        let z = Self::std().inverse_cdf(tau);
        self.mu - self.sigma * Self::std().pdf(z) / tau
    }

    pub fn value(&self, measure: RiskMeasure, tau: f64) -> f64 {
        match measure {
            RiskMeasure::Var => self.var(tau),
            RiskMeasure::Cvar => self.cvar(tau),
            RiskMeasure::Expectation => self.mu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeReport {
    pub measure: RiskMeasure,
    pub tau: f64,
    pub delta: f64,
    pub n: usize,
    pub trials: usize,
    pub truth: f64,
    pub violations: usize,
    pub violation_rate: f64,
    /// `delta + 3 sqrt(delta (1 - delta) / trials)`.
    pub threshold: f64,
    pub pass: bool,
}

/// Draws `trials` independent sample sets of size `n` and counts how often
/// the bound exceeds the true risk value. Trial `t` uses stream `t` of `seed`.
pub fn check_guarantee(
    spec: &RiskSpec,
    truth: GaussianTruth,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<GuaranteeReport, RiskError> {
    if trials == 0 {
        return Err(RiskError::InvalidArgument("trials must be at least 1".into()));
    }
    let est = RiskEstimator::new(*spec, n)?;
    let target = truth.value(spec.measure, spec.tau);
    let dist = Normal::new(truth.mu, truth.sigma).map_err(|e| RiskError::InvalidArgument(e.to_string()))?;
    let mut samples = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let mut violations = 0;
    for t in 0..trials {
        let mut rng = stream(seed, t as u64);
        // The essential lower bound must hold for the CVaR formula; the
        // Gaussian has unbounded support, so draws are clipped to it.
        samples.iter_mut().for_each(|s| *s = dist.sample(&mut rng).max(spec.essential_lb));
        let (value, _) = est.evaluate_into(&samples, &mut weights)?;
        violations += (value > target) as usize;
    }
    let m = trials as f64;
    let rate = violations as f64 / m;
    let threshold = spec.delta + 3.0 * (spec.delta * (1.0 - spec.delta) / m).sqrt();
    Ok(GuaranteeReport {
        measure: spec.measure,
        tau: spec.tau,
        delta: spec.delta,
        n,
        trials,
        truth: target,
        violations,
        violation_rate: rate,
        threshold,
        pass: rate <= threshold,
    })
}
