//! Risk-aware belief control barrier functions for a unicycle robot sharing
//! the plane with an uncertain moving object.
//!
//! The controller never sees the object directly. It holds `N` samples of the
//! object position, evaluates a barrier per sample, and lower-bounds a risk
//! measure (VaR, CVaR or the mean) of those values with an order-statistics
//! bound that holds with probability at least `1 - delta`. That bound is the
//! belief barrier; a small QP keeps it positive.
//!
//! * [`risk_bounds`]: concentration lower bounds for VaR, CVaR and expectation.
//! * [`sde_models`]: robot and object SDEs, Euler-Maruyama, seeded noise streams.
//! * [`belief`]: Gaussian-mixture initial beliefs and sample propagation.
//! * [`barriers`]: field-of-view and collision barriers and their composition.
//! * [`safety_filter`]: constraint assembly, QP, reference controller.
//! * [`scenarios`]: closed-loop tracking and collision experiments.

pub mod barriers;
pub mod belief;
pub mod risk_bounds;
pub mod safety_filter;
pub mod scenarios;
pub mod sde_models;

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/risk-bounds.md")]
    mod risk_bounds {}
    #[doc = include_str!("../../../book/src/belief.md")]
    mod belief {}
    #[doc = include_str!("../../../book/src/barriers.md")]
    mod barriers {}
    #[doc = include_str!("../../../book/src/safety-filter.md")]
    mod safety_filter {}
    #[doc = include_str!("../../../book/src/scenarios.md")]
    mod scenarios {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
