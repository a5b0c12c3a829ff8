//! Generalized FGSM estimation for generalized linear models.
//!
//! The crate is organised bottom-up:
//!
//! - [`glm`]: canonical link families, model specifications, datasets and
//!   their CSV persistence.
//! - [`penalties`]: the `L_gamma`, LASSO and SCAD penalty families.
//! - [`adversarial`]: the adversarially perturbed log-likelihood `Q_n`, the
//!   perturbed-covariate generator and analytic (sub)gradients.
//! - [`estimators`]: the local maximizer of `Q_n` over a `K/sqrt(n)` ball, the
//!   penalized-likelihood baseline and the unpenalized MLE.
//! - [`asymptotics`]: population moments, the weak-limit objective `D(u)` and
//!   its maximizer, oracle limits and regularity-condition probes.
//! - [`harness`]: Monte Carlo experiments, reports and persistence.

pub mod adversarial;
pub mod asymptotics;
pub mod error;
pub mod estimators;
pub mod glm;
pub mod harness;
pub mod linalg;
pub mod penalties;
pub mod rng;

pub use error::{Error, Result};

/// Sign with the `sign(0) = 0` convention used throughout the crate.
#[inline]
pub fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}
