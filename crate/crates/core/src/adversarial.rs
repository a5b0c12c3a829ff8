//! The Generalized FGSM objective
//!
//! ```text
//! Q_n(beta) = sum_i [ y_i x_i^T beta - y_i s_i P(beta) - b(x_i^T beta - s_i P(beta)) ],
//! s_i = sign(y_i - b'(x_i^T beta)),   P(beta) = sum_j p_lambda(beta_j),
//! ```
//!
//! which is the GLM log-likelihood evaluated at the adversarially perturbed
//! covariates `x~_i = x_i - s_i (p_lambda(beta_j) / beta_j)_j`.

use nalgebra::{DMatrix, DVector};

use crate::glm::{Dataset, LinkFamily};
use crate::penalties::PenaltySpec;
use crate::{sign, Error, Result};

/// `Q_n` for one dataset, link and penalty. Immutable once built.
#[derive(Debug, Clone)]
pub struct AdversarialObjective<'a> {
    dataset: &'a Dataset,
    link: LinkFamily,
    penalty: PenaltySpec,
    frozen_signs: Option<Vec<f64>>,
}

/// Pieces of `Q_n` at one `beta` with the residual signs held fixed.
#[derive(Debug, Clone)]
pub struct SmoothParts {
    pub value: f64,
    /// `dQ/dbeta` with `P` held fixed.
    pub gradient: DVector<f64>,
    /// `dQ/dP`; negative near the truth, so `P` acts as a penalty.
    pub penalty_slope: f64,
    /// `b''(x_i^T beta - s_i P)` per observation.
    pub weights: Vec<f64>,
}

/// Covariates perturbed by the adversarial step at `beta_used`.
#[derive(Debug, Clone)]
pub struct PerturbedDataset {
    pub x_tilde: DMatrix<f64>,
    pub base: Dataset,
    pub beta_used: DVector<f64>,
}

impl PerturbedDataset {
    /// Column-wise `max_i |x~_ij - x_ij|`.
    pub fn max_abs_perturbation(&self) -> Vec<f64> {
        (0..self.base.p())
            .map(|j| {
                self.x_tilde
                    .column(j)
                    .iter()
                    .zip(self.base.x.column(j).iter())
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
            })
            .collect()
    }
}

impl<'a> AdversarialObjective<'a> {
    pub fn new(dataset: &'a Dataset, link: LinkFamily, penalty: PenaltySpec) -> Result<Self> {
        link.validate()?;
        penalty.validate()?;
        Ok(AdversarialObjective { dataset, link, penalty, frozen_signs: None })
    }

    /// Variant whose residual signs are fixed at `beta_ref` instead of being
    /// recomputed at every evaluation; used for sensitivity comparisons.
    pub fn with_frozen_signs(mut self, beta_ref: &DVector<f64>) -> Result<Self> {
        let e = crate::glm::residuals(self.dataset, beta_ref, &self.link)?;
        self.frozen_signs = Some(e.iter().map(|&v| sign(v)).collect());
        Ok(self)
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn link(&self) -> LinkFamily {
        self.link
    }

    pub fn penalty(&self) -> PenaltySpec {
        self.penalty
    }

    pub fn p(&self) -> usize {
        self.dataset.p()
    }

    fn check(&self, beta: &DVector<f64>) -> Result<()> {
        if beta.len() != self.p() {
            return Err(Error::DimensionMismatch { expected: self.p(), found: beta.len() });
        }
        Ok(())
    }

    #[inline]
    fn residual_sign(&self, i: usize, y: f64, theta: f64) -> f64 {
        match &self.frozen_signs {
            Some(s) => s[i],
            None => sign(y - self.link.b1(theta)),
        }
    }

    /// `Q_n(beta)`.
    pub fn objective(&self, beta: &DVector<f64>) -> Result<f64> {
        self.check(beta)?;
        Ok(self.value_unchecked(beta))
    }

    pub(crate) fn value_unchecked(&self, beta: &DVector<f64>) -> f64 {
        let theta = &self.dataset.x * beta;
        let pen = self.penalty.value(beta.as_slice());
        let link = self.link;
        self.dataset
            .y
            .iter()
            .zip(theta.iter())
            .enumerate()
            .map(|(i, (&y, &t))| {
                let s = self.residual_sign(i, y, t);
                y * t - y * s * pen - link.b(t - s * pen)
            })
            .sum()
    }

    pub fn smooth_parts(&self, beta: &DVector<f64>) -> Result<SmoothParts> {
        self.check(beta)?;
        Ok(self.smooth_parts_unchecked(beta))
    }

    pub(crate) fn smooth_parts_unchecked(&self, beta: &DVector<f64>) -> SmoothParts {
        let theta = &self.dataset.x * beta;
        let pen = self.penalty.value(beta.as_slice());
        let link = self.link;
        let n = self.dataset.n();
        let mut value = 0.0;
        let mut penalty_slope = 0.0;
        let mut score = DVector::zeros(n);
        let mut weights = Vec::with_capacity(n);
        for (i, (&y, &t)) in self.dataset.y.iter().zip(theta.iter()).enumerate() {
            let s = self.residual_sign(i, y, t);
            let shifted = t - s * pen;
            value += y * t - y * s * pen - link.b(shifted);
            let r = y - link.b1(shifted);
            score[i] = r;
            penalty_slope -= s * r;
            weights.push(link.b2(shifted));
        }
        SmoothParts { value, gradient: self.dataset.x.tr_mul(&score), penalty_slope, weights }
    }

    /// `grad Q_n` with each `sign(e_i)` held at its current value and
    /// `p'_lambda(0) = 0` at zero coordinates.
    pub fn subgradient(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let parts = self.smooth_parts(beta)?;
        Ok(DVector::from_iterator(
            self.p(),
            parts
                .gradient
                .iter()
                .zip(beta.iter())
                .map(|(g, &b)| g + parts.penalty_slope * self.penalty.derivative(b)),
        ))
    }

    /// `x~_i = x_i - sign(e_i) m(beta)` with `m_j = 1{beta_j != 0} p_lambda(beta_j)/beta_j`.
    pub fn perturb(&self, beta: &DVector<f64>) -> Result<PerturbedDataset> {
        self.check(beta)?;
        let magnitudes = self.penalty.perturbation_magnitudes(beta.as_slice());
        let theta = &self.dataset.x * beta;
        let mut x_tilde = self.dataset.x.clone();
        for i in 0..self.dataset.n() {
            let s = self.residual_sign(i, self.dataset.y[i], theta[i]);
            if s == 0.0 {
                continue;
            }
            for (j, m) in magnitudes.iter().enumerate() {
                x_tilde[(i, j)] -= s * m;
            }
        }
        Ok(PerturbedDataset { x_tilde, base: self.dataset.clone(), beta_used: beta.clone() })
    }
}
