//! Penalty families `p_lambda`, applied componentwise and summed over
//! coordinates for vectors.

use serde::{Deserialize, Serialize};

use crate::{sign, Error, Result};

pub const DEFAULT_SCAD_A: f64 = 3.7;

fn default_scad_a() -> f64 {
    DEFAULT_SCAD_A
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum PenaltySpec {
    /// `lambda |theta|^gamma`.
    #[serde(rename = "lgamma")]
    LGamma {
        gamma: f64,
        #[serde(alias = "lambda0")]
        lambda: f64,
    },
    /// `lambda |theta|`.
    Lasso {
        #[serde(alias = "lambda0")]
        lambda: f64,
    },
    /// Smoothly clipped absolute deviation with shape `a > 2`.
    Scad {
        #[serde(alias = "lambda0")]
        lambda: f64,
        #[serde(default = "default_scad_a")]
        a: f64,
    },
}

impl PenaltySpec {
    pub fn lasso(lambda: f64) -> Self {
        PenaltySpec::Lasso { lambda }
    }

    pub fn scad(lambda: f64) -> Self {
        PenaltySpec::Scad { lambda, a: DEFAULT_SCAD_A }
    }

    pub fn lgamma(gamma: f64, lambda: f64) -> Self {
        PenaltySpec::LGamma { gamma, lambda }
    }

    pub fn lambda(&self) -> f64 {
        match *self {
            PenaltySpec::LGamma { lambda, .. } | PenaltySpec::Lasso { lambda } | PenaltySpec::Scad { lambda, .. } => {
                lambda
            }
        }
    }

    /// Same family and shape, different multiplier.
    pub fn with_lambda(&self, lambda: f64) -> Self {
        match *self {
            PenaltySpec::LGamma { gamma, .. } => PenaltySpec::LGamma { gamma, lambda },
            PenaltySpec::Lasso { .. } => PenaltySpec::Lasso { lambda },
            PenaltySpec::Scad { a, .. } => PenaltySpec::Scad { lambda, a },
        }
    }

    /// Exponent of `|beta|` in `||beta||_gamma^gamma`; SCAD has none.
    pub fn gamma(&self) -> Option<f64> {
        match *self {
            PenaltySpec::LGamma { gamma, .. } => Some(gamma),
            PenaltySpec::Lasso { .. } => Some(1.0),
            PenaltySpec::Scad { .. } => None,
        }
    }

    pub fn family_name(&self) -> &'static str {
        match self {
            PenaltySpec::LGamma { .. } => "lgamma",
            PenaltySpec::Lasso { .. } => "lasso",
            PenaltySpec::Scad { .. } => "scad",
        }
    }

    pub fn validate(&self) -> Result<()> {
        let lambda = self.lambda();
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::InvalidPenalty(format!("lambda must be finite and >= 0, got {lambda}")));
        }
        match *self {
            PenaltySpec::LGamma { gamma, .. } if !(gamma.is_finite() && gamma > 0.0) => {
                Err(Error::InvalidPenalty(format!("gamma must be positive, got {gamma}")))
            }
            PenaltySpec::Scad { a, .. } if !(a.is_finite() && a > 2.0) => {
                Err(Error::InvalidPenalty(format!("SCAD needs a > 2, got {a}")))
            }
            _ => Ok(()),
        }
    }

    /// `p_lambda(theta)` for a scalar.
    #[inline]
    pub fn value_scalar(&self, theta: f64) -> f64 {
        let t = theta.abs();
        match *self {
            PenaltySpec::LGamma { gamma, lambda } => {
                if t == 0.0 {
                    0.0
                } else {
                    lambda * t.powf(gamma)
                }
            }
            PenaltySpec::Lasso { lambda } => lambda * t,
            PenaltySpec::Scad { lambda, a } => {
                if t <= lambda {
                    lambda * t
                } else if t <= a * lambda {
                    -(t * t - 2.0 * a * lambda * t + lambda * lambda) / (2.0 * (a - 1.0))
                } else {
                    (a + 1.0) * lambda * lambda / 2.0
                }
            }
        }
    }

    /// `sum_j p_lambda(theta_j)`.
    pub fn value(&self, theta: &[f64]) -> f64 {
        theta.iter().map(|&t| self.value_scalar(t)).sum()
    }

    /// `p'_lambda(theta)`, with the value `0` at `theta = 0`.
    #[inline]
    pub fn derivative(&self, theta: f64) -> f64 {
        if theta == 0.0 {
            return 0.0;
        }
        let t = theta.abs();
        let s = sign(theta);
        match *self {
            PenaltySpec::LGamma { gamma, lambda } => s * lambda * gamma * t.powf(gamma - 1.0),
            PenaltySpec::Lasso { lambda } => s * lambda,
            PenaltySpec::Scad { lambda, a } => {
                if t <= lambda {
                    s * lambda
                } else {
                    s * (a * lambda - t).max(0.0) / (a - 1.0)
                }
            }
        }
    }

    /// Right derivative at zero, `p'_lambda(0+)`; infinite for `gamma < 1`.
    pub fn right_derivative_at_zero(&self) -> f64 {
        match *self {
            PenaltySpec::LGamma { lambda, .. } | PenaltySpec::Lasso { lambda } | PenaltySpec::Scad { lambda, .. }
                if lambda == 0.0 =>
            {
                0.0
            }
            PenaltySpec::LGamma { gamma, lambda } => {
                if gamma > 1.0 {
                    0.0
                } else if gamma == 1.0 {
                    lambda
                } else {
                    f64::INFINITY
                }
            }
            PenaltySpec::Lasso { lambda } | PenaltySpec::Scad { lambda, .. } => lambda,
        }
    }

    /// `p''_lambda(theta)` away from the kinks (zero at `theta = 0`).
    pub fn second_derivative(&self, theta: f64) -> f64 {
        if theta == 0.0 {
            return 0.0;
        }
        let t = theta.abs();
        match *self {
            PenaltySpec::LGamma { gamma, lambda } => lambda * gamma * (gamma - 1.0) * t.powf(gamma - 2.0),
            PenaltySpec::Lasso { .. } => 0.0,
            PenaltySpec::Scad { lambda, a } => {
                if t > lambda && t <= a * lambda {
                    -1.0 / (a - 1.0)
                } else {
                    0.0
                }
            }
        }
    }

    /// Componentwise `1{beta_j != 0} p_lambda(beta_j) / beta_j`, the step the
    /// perturbation moves each covariate by.
    pub fn perturbation_magnitudes(&self, beta: &[f64]) -> Vec<f64> {
        beta.iter()
            .map(|&b| match self {
                _ if b == 0.0 => 0.0,
                PenaltySpec::Lasso { lambda } => lambda * b.signum(),
                _ => self.value_scalar(b) / b,
            })
            .collect()
    }
}
