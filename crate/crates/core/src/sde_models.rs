//! Robot and object stochastic dynamics with a fixed-step Euler-Maruyama
//! integrator.
//!
//! The robot is a stochastic unicycle `dx = g(x) u dt + sigma dz` with
//! `x = (p_x, p_y, theta)`, `u = (u_v, u_omega)` and
//! `g(x) = [cos(theta) 0; sin(theta) 0; 0 1]`. The object is a stochastic
//! single integrator `do = v dt + d dw`. Both diffusions are constant and
//! diagonal.

use nalgebra::{Matrix3x2, SVector, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("time step must be positive, got {0}")]
    NonPositiveDt(f64),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub p_x: f64,
    pub p_y: f64,
    pub theta: f64,
}

impl RobotState {
    pub fn new(p_x: f64, p_y: f64, theta: f64) -> Self {
        Self { p_x, p_y, theta: wrap_angle(theta) }
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.p_x, self.p_y)
    }

    pub fn to_vector(&self) -> Vector3<f64> {
        Vector3::new(self.p_x, self.p_y, self.theta)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    /// One Euler-Maruyama step under control `u`; `noise` holds three
    /// standard normals.
    pub fn step(
        &self,
        u: &ControlInput,
        params: &ModelParams,
        dt: f64,
        noise: &Vector3<f64>,
    ) -> Result<Self, ModelError> {
        let next = em_step(
            &self.to_vector(),
            &robot_drift(self, u),
            &params.sigma(),
            dt,
            noise,
        )?;
        Ok(Self::from_vector(&next))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub u_v: f64,
    pub u_omega: f64,
}

impl ControlInput {
    pub fn new(u_v: f64, u_omega: f64) -> Self {
        Self { u_v, u_omega }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u_v, self.u_omega)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { u_v: v[0], u_omega: v[1] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ObjectState {
    pub q_x: f64,
    pub q_y: f64,
}

impl ObjectState {
    pub fn new(q_x: f64, q_y: f64) -> Self {
        Self { q_x, q_y }
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.q_x, self.q_y)
    }

    pub fn from_vector(v: &Vector2<f64>) -> Self {
        Self { q_x: v[0], q_y: v[1] }
    }

    pub fn step(
        &self,
        velocity: &Vector2<f64>,
        params: &ModelParams,
        dt: f64,
        noise: &Vector2<f64>,
    ) -> Result<Self, ModelError> {
        let next = em_step(
            &self.to_vector(),
            &object_drift(self, velocity),
            &params.d(),
            dt,
            noise,
        )?;
        Ok(Self::from_vector(&next))
    }
}

/// Physical and noise parameters of the robot/object pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    /// Robot diffusion diagonal for `(p_x, p_y, theta)`.
    pub sigma_diag: [f64; 3],
    /// Object diffusion diagonal for `(q_x, q_y)`.
    pub d_diag: [f64; 2],
    /// Robot footprint radius [m].
    pub r_e: f64,
    /// Object footprint radius [m].
    pub r_o: f64,
    /// Offset between rear axle and footprint centre [m].
    pub s_e: f64,
    /// Field-of-view amplitude [rad].
    pub beta: f64,
    /// Object velocity known to the controller [m/s].
    pub object_velocity: [f64; 2],
    /// Radius of the bounded workspace used for the FoV essential lower bound [m].
    #[serde(default = "default_workspace_radius")]
    pub workspace_radius: f64,
}

fn default_workspace_radius() -> f64 {
    20.0
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            sigma_diag: [0.03, 0.03, 0.01],
            d_diag: [0.1, 0.1],
            r_e: 0.3,
            r_o: 0.2,
            s_e: 0.1,
            beta: 40f64.to_radians(),
            object_velocity: [0.0, 0.0],
            workspace_radius: default_workspace_radius(),
        }
    }
}

impl ModelParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: &str| Err(ModelError::InvalidParams(m.to_string()));
        if self.sigma_diag.iter().chain(&self.d_diag).any(|&s| !(s > 0.0 && s.is_finite())) {
            return bad("diffusion entries must be positive and finite");
        }
        if !(self.r_e > 0.0 && self.r_o > 0.0) {
            return bad("footprint radii must be positive");
        }
        if !(self.s_e.is_finite() && self.s_e >= 0.0) {
            return bad("axle offset must be non-negative");
        }
        if !(self.beta > 0.0 && self.beta < std::f64::consts::PI) {
            return bad("FoV amplitude must lie in (0, pi)");
        }
        if !(self.workspace_radius > 0.0 && self.workspace_radius.is_finite()) {
            return bad("workspace radius must be positive");
        }
        if self.object_velocity.iter().any(|v| !v.is_finite()) {
            return bad("object velocity must be finite");
        }
        Ok(())
    }

    pub fn sigma(&self) -> Vector3<f64> {
        Vector3::from(self.sigma_diag)
    }

    pub fn d(&self) -> Vector2<f64> {
        Vector2::from(self.d_diag)
    }

    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::from(self.object_velocity)
    }
}

/// Wraps an angle to `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    if theta > -PI && theta <= PI {
        return theta;
    }
    let r = (theta + PI).rem_euclid(TAU) - PI;
    if r <= -PI {
        r + TAU
    } else {
        r
    }
}

/// Control matrix `g(x)` of the unicycle.
pub fn robot_input_matrix(x: &RobotState) -> Matrix3x2<f64> {
    let (s, c) = x.theta.sin_cos();
    Matrix3x2::new(c, 0.0, s, 0.0, 0.0, 1.0)
}

/// Drift-free part `f(x)` of the robot model, identically zero for the unicycle.
pub fn robot_autonomous_drift(_x: &RobotState) -> Vector3<f64> {
    Vector3::zeros()
}

/// `f(x) + g(x) u`.
pub fn robot_drift(x: &RobotState, u: &ControlInput) -> Vector3<f64> {
    robot_autonomous_drift(x) + robot_input_matrix(x) * u.to_vector()
}

/// Single-integrator drift: the velocity, independent of the state.
pub fn object_drift(_o: &ObjectState, velocity: &Vector2<f64>) -> Vector2<f64> {
    *velocity
}

/// `state + drift dt + diffusion .* sqrt(dt) .* noise`.
pub fn em_step<const D: usize>(
    state: &SVector<f64, D>,
    drift: &SVector<f64, D>,
    diffusion_diag: &SVector<f64, D>,
    dt: f64,
    gaussian_noise: &SVector<f64, D>,
) -> Result<SVector<f64, D>, ModelError> {
    if !(dt > 0.0) {
        return Err(ModelError::NonPositiveDt(dt));
    }
    let sq = dt.sqrt();
    Ok(state + drift * dt + diffusion_diag.component_mul(gaussian_noise) * sq)
}

/// Independent noise streams for one simulation run, all derived from a single seed.
///
/// Each entity reads from its own ChaCha stream, so the draws consumed by one
/// (say the belief) never shift those seen by another (the ground truth).
#[derive(Debug, Clone)]
pub struct NoiseStreams {
    pub robot: ChaCha8Rng,
    pub truth: ChaCha8Rng,
    pub belief: ChaCha8Rng,
    pub init: ChaCha8Rng,
}

impl NoiseStreams {
    const ROBOT: u64 = 1;
    const TRUTH: u64 = 2;
    const BELIEF: u64 = 3;
    const INIT: u64 = 4;

    pub fn new(seed: u64) -> Self {
        Self {
            robot: stream(seed, Self::ROBOT),
            truth: stream(seed, Self::TRUTH),
            belief: stream(seed, Self::BELIEF),
            init: stream(seed, Self::INIT),
        }
    }
}

/// ChaCha8 generator for `(seed, stream_id)`.
pub fn stream(seed: u64, stream_id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id);
    rng
}

pub fn normal2<R: Rng + ?Sized>(rng: &mut R) -> Vector2<f64> {
    Vector2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

pub fn normal3<R: Rng + ?Sized>(rng: &mut R) -> Vector3<f64> {
    Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    )
}
