//! Plug-in risk estimates from the empirical CDF of the samples.

use super::RiskError;

fn ascending(samples: &[f64]) -> Result<Vec<f64>, RiskError> {
    if samples.is_empty() {
        return Err(RiskError::InvalidArgument("empty sample set".into()));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(RiskError::NonFinite);
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Empirical lower `tau`-quantile: the `j`-th smallest sample with
/// `j = max(1, floor(N tau))`.
pub fn empirical_var(samples: &[f64], tau: f64) -> Result<f64, RiskError> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(RiskError::InvalidArgument(format!("tau must lie in (0, 1), got {tau}")));
    }
    if samples.is_empty() {
        return Err(RiskError::InvalidArgument("empty sample set".into()));
    }
    let n = samples.len();
    let j = ((n as f64 * tau).floor() as usize).clamp(1, n);
    let mut v = samples.to_vec();
    if v.iter().any(|x| !x.is_finite()) {
        return Err(RiskError::NonFinite);
    }
    let (_, nth, _) = v.select_nth_unstable_by(j - 1, f64::total_cmp);
    Ok(*nth)
}

/// Empirical `CVaR_tau`: `(1/tau) * integral_0^tau F_N^{-1}(u) du` with the
/// empirical quantile function, i.e. the mean of the lowest `tau` fraction of
/// the samples with the boundary sample weighted fractionally.
pub fn empirical_cvar(samples: &[f64], tau: f64) -> Result<f64, RiskError> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(RiskError::InvalidArgument(format!("tau must lie in (0, 1], got {tau}")));
    }
    let v = ascending(samples)?;
    let n = v.len() as f64;
    let mass = n * tau;
    let full = (mass.floor() as usize).min(v.len());
    let mut acc: f64 = v[..full].iter().sum();
    let frac = mass - full as f64;
    if frac > 0.0 && full < v.len() {
        acc += frac * v[full];
    }
    Ok(acc / mass)
}
