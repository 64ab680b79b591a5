//! Sample-based belief over the object state.
//!
//! The belief is the stacked vector of `N` object samples. With no
//! measurement updates every sample follows the object SDE with its own
//! Brownian increment, so propagation is `N` independent Euler-Maruyama steps.

use nalgebra::{Matrix2, Vector2};
use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sde_models::{normal2, ModelError, ObjectState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BeliefError {
    #[error("invalid mixture: {0}")]
    InvalidMixture(String),
    #[error("covariance of component {0} is not symmetric positive semi-definite")]
    NotPositiveDefinite(usize),
    #[error("sample count must be positive")]
    Empty,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Finite Gaussian mixture over the planar object position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<[f64; 2]>,
    /// Row-major 2x2 covariances.
    pub covariances: Vec<[[f64; 2]; 2]>,
}

impl GaussianMixture {
    pub fn validate(&self) -> Result<(), BeliefError> {
        let m = self.weights.len();
        if m == 0 || self.means.len() != m || self.covariances.len() != m {
            return Err(BeliefError::InvalidMixture(format!(
                "{} weights, {} means, {} covariances",
                m,
                self.means.len(),
                self.covariances.len()
            )));
        }
        if self.weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(BeliefError::InvalidMixture("weights must be non-negative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(BeliefError::InvalidMixture(format!("weights sum to {total}, not 1")));
        }
        if self.means.iter().flatten().any(|v| !v.is_finite()) {
            return Err(BeliefError::InvalidMixture("means must be finite".into()));
        }
        for i in 0..m {
            self.cholesky(i)?;
        }
        Ok(())
    }

    /// Lower Cholesky factor of component `i`; semi-definite matrices are accepted.
    pub fn cholesky(&self, i: usize) -> Result<Matrix2<f64>, BeliefError> {
        let [[a, b], [c, d]] = self.covariances[i];
        let tol = 1e-12 * (a.abs() + d.abs()).max(1.0);
        if ![a, b, c, d].iter().all(|v| v.is_finite()) || (b - c).abs() > tol || a < 0.0 || d < 0.0 {
            return Err(BeliefError::NotPositiveDefinite(i));
        }
        let l11 = a.sqrt();
        let l21 = if l11 > 0.0 {
            b / l11
        } else if b.abs() <= tol {
            0.0
        } else {
            return Err(BeliefError::NotPositiveDefinite(i));
        };
        let rem = d - l21 * l21;
        if rem < -tol {
            return Err(BeliefError::NotPositiveDefinite(i));
        }
        Ok(Matrix2::new(l11, 0.0, l21, rem.max(0.0).sqrt()))
    }

    /// One draw: component by weight, then `mean + L z`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<ObjectState, BeliefError> {
        let comps = self.prepared()?;
        Ok(comps.draw(rng))
    }

    fn prepared(&self) -> Result<PreparedMixture, BeliefError> {
        self.validate()?;
        let chol = (0..self.weights.len()).map(|i| self.cholesky(i)).collect::<Result<_, _>>()?;
        let picker = WeightedIndex::new(&self.weights)
            .map_err(|e| BeliefError::InvalidMixture(e.to_string()))?;
        Ok(PreparedMixture {
            picker,
            means: self.means.iter().map(|m| Vector2::from(*m)).collect(),
            chol,
        })
    }

    /// Copy with every mean shifted by `offsets[i]`.
    pub fn with_mean_offsets(&self, offsets: &[[f64; 2]]) -> Self {
        let mut out = self.clone();
        for (m, o) in out.means.iter_mut().zip(offsets) {
            m[0] += o[0];
            m[1] += o[1];
        }
        out
    }
}

struct PreparedMixture {
    picker: WeightedIndex<f64>,
    means: Vec<Vector2<f64>>,
    chol: Vec<Matrix2<f64>>,
}

impl PreparedMixture {
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> ObjectState {
        let c = self.picker.sample(rng);
        let z = normal2(rng);
        ObjectState::from_vector(&(self.means[c] + self.chol[c] * z))
    }
}

/// `N` object samples, the controller's only knowledge of the object.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    pub samples: Vec<ObjectState>,
}

impl BeliefState {
    pub fn new(samples: Vec<ObjectState>) -> Result<Self, BeliefError> {
        if samples.is_empty() {
            return Err(BeliefError::Empty);
        }
        if samples.iter().any(|s| !(s.q_x.is_finite() && s.q_y.is_finite())) {
            return Err(BeliefError::InvalidMixture("belief samples must be finite".into()));
        }
        Ok(Self { samples })
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// Advances every sample by one Euler-Maruyama step with an independent
    /// Brownian increment; sample `i` stays at index `i`.
    pub fn propagate<R: Rng + ?Sized>(
        &self,
        velocity: &Vector2<f64>,
        d_diag: &Vector2<f64>,
        dt: f64,
        rng: &mut R,
    ) -> Result<Self, BeliefError> {
        let mut next = self.clone();
        next.propagate_in_place(velocity, d_diag, dt, rng)?;
        Ok(next)
    }

    pub fn propagate_in_place<R: Rng + ?Sized>(
        &mut self,
        velocity: &Vector2<f64>,
        d_diag: &Vector2<f64>,
        dt: f64,
        rng: &mut R,
    ) -> Result<(), BeliefError> {
        if !(dt > 0.0) {
            return Err(ModelError::NonPositiveDt(dt).into());
        }
        let drift = velocity * dt;
        let scale = d_diag * dt.sqrt();
        for s in &mut self.samples {
            let z = normal2(rng);
            s.q_x += drift[0] + scale[0] * z[0];
            s.q_y += drift[1] + scale[1] * z[1];
        }
        Ok(())
    }

    /// Sample mean and covariance.
    pub fn moments(&self) -> (Vector2<f64>, Matrix2<f64>) {
        let n = self.n() as f64;
        let mean = self.samples.iter().map(|s| s.to_vector()).sum::<Vector2<f64>>() / n;
        let cov = self
            .samples
            .iter()
            .map(|s| {
                let d = s.to_vector() - mean;
                d * d.transpose()
            })
            .sum::<Matrix2<f64>>()
            / n;
        (mean, cov)
    }
}

/// `n` i.i.d. draws from the mixture.
pub fn sample_initial_belief<R: Rng + ?Sized>(
    mix: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> Result<BeliefState, BeliefError> {
    if n == 0 {
        return Err(BeliefError::Empty);
    }
    let prepared = mix.prepared()?;
    BeliefState::new((0..n).map(|_| prepared.draw(rng)).collect())
}

/// `propagate` as a free function.
pub fn propagate_belief<R: Rng + ?Sized>(
    b: &BeliefState,
    velocity: &Vector2<f64>,
    d_diag: &Vector2<f64>,
    dt: f64,
    rng: &mut R,
) -> Result<BeliefState, BeliefError> {
    b.propagate(velocity, d_diag, dt, rng)
}

/// Draws the hidden ground-truth object from the same mixture.
pub fn draw_ground_truth<R: Rng + ?Sized>(
    mix: &GaussianMixture,
    rng: &mut R,
) -> Result<ObjectState, BeliefError> {
    mix.sample(rng)
}
