//! Local maximizers: the Generalized FGSM estimator restricted to the ball
//! `||beta - beta0|| <= K / sqrt(n)`, the penalized-likelihood baseline
//! `sum_i [y_i x_i^T beta - b(x_i^T beta)] - n P(beta)`, and the plain MLE.

mod ascent;
mod mle;

pub use ascent::{LocalModel, PenalizedObjective};
pub use mle::fit_mle;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversarial::AdversarialObjective;
use crate::glm::{Dataset, LinkFamily};
use crate::linalg::weighted_gram;
use crate::penalties::PenaltySpec;
use crate::rng;
use crate::{Error, Result};

use ascent::{ascend, polish, Ball, RunOutcome, Tolerances};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    /// `K` in the search region `||beta - beta0|| <= K / sqrt(n)`.
    #[serde(alias = "ball_radius_K")]
    pub ball_radius_k: f64,
    pub restarts: usize,
    pub max_iterations: usize,
    pub step_tolerance: f64,
    pub objective_tolerance: f64,
    pub seed: u64,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions {
            ball_radius_k: 10.0,
            restarts: 8,
            max_iterations: 500,
            step_tolerance: 1e-10,
            objective_tolerance: 1e-9,
            seed: 0,
        }
    }
}

impl EstimatorOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidOptions(m.to_string()));
        if !(self.ball_radius_k.is_finite() && self.ball_radius_k > 0.0) {
            return bad("ball_radius_K must be positive");
        }
        if self.restarts < 1 {
            return bad("restarts must be >= 1");
        }
        if self.max_iterations < 1 {
            return bad("max_iterations must be >= 1");
        }
        if !(self.step_tolerance > 0.0 && self.objective_tolerance > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub beta_hat: Vec<f64>,
    pub objective_value: f64,
    pub converged: bool,
    pub iterations_used: usize,
    /// `true` where the coordinate is treated as exactly zero.
    pub active_set: Vec<bool>,
    pub restart_index: usize,
}

/// Zero-reporting threshold `1e-6 (1 + ||beta0||_inf)`.
pub fn zero_threshold(beta0: &[f64]) -> f64 {
    1e-6 * (1.0 + beta0.iter().fold(0.0f64, |m, b| m.max(b.abs())))
}

/// `sum_i [y_i x_i^T beta - b(x_i^T beta)] - n P(beta)`.
#[derive(Debug, Clone)]
pub struct PenalizedLikelihood<'a> {
    dataset: &'a Dataset,
    link: LinkFamily,
    penalty: PenaltySpec,
}

impl<'a> PenalizedLikelihood<'a> {
    pub fn new(dataset: &'a Dataset, link: LinkFamily, penalty: PenaltySpec) -> Result<Self> {
        link.validate()?;
        penalty.validate()?;
        Ok(PenalizedLikelihood { dataset, link, penalty })
    }

    pub fn objective(&self, beta: &DVector<f64>) -> Result<f64> {
        if beta.len() != self.dataset.p() {
            return Err(Error::DimensionMismatch { expected: self.dataset.p(), found: beta.len() });
        }
        Ok(self.value(beta))
    }
}

impl PenalizedObjective for PenalizedLikelihood<'_> {
    fn dim(&self) -> usize {
        self.dataset.p()
    }

    fn penalty(&self) -> PenaltySpec {
        self.penalty
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        let theta = &self.dataset.x * beta;
        let ll: f64 = self.dataset.y.iter().zip(theta.iter()).map(|(y, &t)| y * t - self.link.b(t)).sum();
        ll - self.dataset.n() as f64 * self.penalty.value(beta.as_slice())
    }

    fn local_model(&self, beta: &DVector<f64>) -> LocalModel {
        let theta = &self.dataset.x * beta;
        let n = self.dataset.n() as f64;
        let score = DVector::from_iterator(
            theta.len(),
            self.dataset.y.iter().zip(theta.iter()).map(|(y, &t)| y - self.link.b1(t)),
        );
        let weights: Vec<f64> = theta.iter().map(|&t| self.link.b2(t)).collect();
        let mut curvature = weighted_gram(&self.dataset.x, &weights);
        for (j, &b) in beta.iter().enumerate() {
            curvature[(j, j)] += (n * self.penalty.second_derivative(b)).max(0.0);
        }
        LocalModel {
            value: self.value(beta),
            gradient: self.dataset.x.tr_mul(&score),
            penalty_slope: -n,
            curvature,
        }
    }
}

impl PenalizedObjective for AdversarialObjective<'_> {
    fn dim(&self) -> usize {
        self.p()
    }

    fn penalty(&self) -> PenaltySpec {
        AdversarialObjective::penalty(self)
    }

    fn value(&self, beta: &DVector<f64>) -> f64 {
        self.value_unchecked(beta)
    }

    fn local_model(&self, beta: &DVector<f64>) -> LocalModel {
        let parts = self.smooth_parts_unchecked(beta);
        let penalty = AdversarialObjective::penalty(self);
        let mut curvature = weighted_gram(&self.dataset().x, &parts.weights);
        for (j, &b) in beta.iter().enumerate() {
            curvature[(j, j)] += (-parts.penalty_slope * penalty.second_derivative(b)).max(0.0);
        }
        LocalModel { value: parts.value, gradient: parts.gradient, penalty_slope: parts.penalty_slope, curvature }
    }
}

/// Starting points: `beta0` first, then uniform draws from the ball.
fn restart_points(beta0: &DVector<f64>, radius: f64, opts: &EstimatorOptions) -> Vec<DVector<f64>> {
    let p = beta0.len();
    (0..opts.restarts)
        .map(|r| {
            if r == 0 {
                return beta0.clone();
            }
            let mut rng = rng::substream(opts.seed, r as u64);
            let dir = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
            let norm = dir.norm();
            let u: f64 = rng.random();
            let rad = radius * u.powf(1.0 / p as f64);
            if norm == 0.0 {
                beta0.clone()
            } else {
                beta0 + dir * (rad / norm)
            }
        })
        .collect()
}

/// Multi-restart projected ascent over the ball `||beta - beta0|| <= K/sqrt(n)`.
pub fn maximize_in_ball<O: PenalizedObjective>(
    obj: &O,
    n: usize,
    beta0: &DVector<f64>,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    opts.validate()?;
    if beta0.len() != obj.dim() {
        return Err(Error::DimensionMismatch { expected: obj.dim(), found: beta0.len() });
    }
    let radius = opts.ball_radius_k / (n as f64).sqrt();
    let ball = Ball { center: beta0, radius };
    let tol = Tolerances { max_iterations: opts.max_iterations, step: opts.step_tolerance, objective: opts.objective_tolerance };
    let threshold = zero_threshold(beta0.as_slice());
    let starts = restart_points(beta0, radius, opts);
    let runs: Vec<RunOutcome> = starts
        .par_iter()
        .map(|s| {
            let mut run = ascend(obj, ball, s, &tol)?;
            polish(obj, ball, &mut run, threshold, opts.objective_tolerance);
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let (restart_index, best) = runs
        .iter()
        .enumerate()
        .fold(None::<(usize, &RunOutcome)>, |acc, (i, r)| match acc {
            Some((_, b)) if b.value >= r.value => acc,
            _ => Some((i, r)),
        })
        .expect("at least one restart");
    Ok(EstimateResult {
        beta_hat: best.beta.iter().copied().collect(),
        objective_value: best.value,
        converged: best.converged,
        iterations_used: best.iterations,
        active_set: best.beta.iter().map(|b| b.abs() <= threshold).collect(),
        restart_index,
    })
}

/// Generalized FGSM estimator: local maximizer of `Q_n` near `beta0`.
pub fn fit_fgsm(obj: &AdversarialObjective<'_>, beta0: &DVector<f64>, opts: &EstimatorOptions) -> Result<EstimateResult> {
    maximize_in_ball(obj, obj.dataset().n(), beta0, opts)
}

/// Penalized-likelihood baseline under the same search procedure.
pub fn fit_penalized_likelihood(
    dataset: &Dataset,
    link: LinkFamily,
    penalty: PenaltySpec,
    beta0: &DVector<f64>,
    opts: &EstimatorOptions,
) -> Result<EstimateResult> {
    let obj = PenalizedLikelihood::new(dataset, link, penalty)?;
    maximize_in_ball(&obj, dataset.n(), beta0, opts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::{sample_dataset, CovariateDistribution, ModelSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(xs)
    }

    fn gaussian_data(beta0: &[f64], n: usize, seed: u64) -> Dataset {
        let model = ModelSpec::new(
            LinkFamily::LinearGaussian { sigma: 1.0 },
            beta0.to_vec(),
            CovariateDistribution::standard_gaussian(beta0.len()),
        )
        .unwrap();
        sample_dataset(&model, n, seed).unwrap()
    }

    #[test]
    fn options_validation() {
        assert!(EstimatorOptions::default().validate().is_ok());
        assert!(EstimatorOptions { restarts: 0, ..Default::default() }.validate().is_err());
        assert!(EstimatorOptions { step_tolerance: 0.0, ..Default::default() }.validate().is_err());
        assert!(EstimatorOptions { ball_radius_k: -1.0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn single_observation_at_zero() {
        let ds = Dataset::from_rows(&[&[1.0]], &[0.0]).unwrap();
        let link = LinkFamily::LinearGaussian { sigma: 1.0 };
        for penalty in [PenaltySpec::lasso(0.3), PenaltySpec::scad(0.3), PenaltySpec::lgamma(0.5, 0.3), PenaltySpec::lgamma(2.0, 0.3)] {
            let obj = AdversarialObjective::new(&ds, link, penalty).unwrap();
            let fit = fit_fgsm(&obj, &v(&[0.0]), &EstimatorOptions::default()).unwrap();
            // grid oracle over the ball [-10, 10]
            let grid_best = (0..=2001)
                .map(|k| -10.0 + 20.0 * k as f64 / 2001.0)
                .map(|b| (b, obj.objective(&v(&[b])).unwrap()))
                .fold((0.0, f64::NEG_INFINITY), |acc, (b, q)| if q > acc.1 { (b, q) } else { acc });
            assert!(grid_best.0.abs() < 0.02);
            assert_eq!(fit.beta_hat, vec![0.0], "{penalty:?}");
            assert_eq!(fit.active_set, vec![true]);
        }
    }

    #[test]
    fn unpenalized_fit_is_least_squares() {
        let ds = gaussian_data(&[1.0, -2.0, 0.5], 300, 8);
        let link = LinkFamily::LinearGaussian { sigma: 1.0 };
        let ols = fit_mle(&ds, link).unwrap();
        let opts = EstimatorOptions { ball_radius_k: 1e3, ..Default::default() };
        let obj = AdversarialObjective::new(&ds, link, PenaltySpec::lasso(0.0)).unwrap();
        let fit = fit_fgsm(&obj, &v(&[1.0, -2.0, 0.5]), &opts).unwrap();
        for (a, b) in fit.beta_hat.iter().zip(&ols.beta_hat) {
            assert!((a - b).abs() < 1e-6);
        }
        assert!(fit.converged);
    }

    #[test]
    fn result_is_feasible_consistent_and_deterministic() {
        let beta0 = v(&[1.0, 0.0, -0.5]);
        let ds = gaussian_data(beta0.as_slice(), 80, 21);
        let link = LinkFamily::LinearGaussian { sigma: 1.0 };
        let opts = EstimatorOptions { ball_radius_k: 2.0, seed: 5, ..Default::default() };
        for penalty in [PenaltySpec::lasso(0.3), PenaltySpec::scad(0.4), PenaltySpec::lgamma(0.5, 0.1)] {
            let obj = AdversarialObjective::new(&ds, link, penalty).unwrap();
            let a = fit_fgsm(&obj, &beta0, &opts).unwrap();
            let b = fit_fgsm(&obj, &beta0, &opts).unwrap();
            assert_eq!(a, b);
            let bh = v(&a.beta_hat);
            assert!((&bh - &beta0).norm() <= 2.0 / (80f64).sqrt() + 1e-12);
            assert!((obj.objective(&bh).unwrap() - a.objective_value).abs() <= 1e-10);
            let thr = zero_threshold(beta0.as_slice());
            for (z, b) in a.active_set.iter().zip(&a.beta_hat) {
                assert_eq!(*z, b.abs() <= thr);
            }
        }
    }

    #[test]
    fn every_restart_ascends_monotonically() {
        let beta0 = v(&[0.5, -1.0]);
        let model = ModelSpec::new(LinkFamily::Logistic, beta0.iter().copied().collect(), CovariateDistribution::standard_gaussian(2)).unwrap();
        let ds = sample_dataset(&model, 150, 2).unwrap();
        let obj = AdversarialObjective::new(&ds, LinkFamily::Logistic, PenaltySpec::scad(0.2)).unwrap();
        let opts = EstimatorOptions { seed: 3, ..Default::default() };
        let radius = opts.ball_radius_k / (150f64).sqrt();
        let tol = Tolerances { max_iterations: 500, step: 1e-10, objective: 1e-9 };
        for start in restart_points(&beta0, radius, &opts) {
            let run = ascend(&obj, Ball { center: &beta0, radius }, &start, &tol).unwrap();
            assert!(run.trace.windows(2).all(|w| w[1] >= w[0] - 1e-9));
        }
    }

    #[test]
    fn lasso_orthogonal_design_soft_thresholds() {
        // x = sqrt(n) * identity blocks, so X^T X = n c I with c = 1.
        let n = 40;
        let p = 2;
        let mut rows = Vec::new();
        for i in 0..n {
            let mut r = vec![0.0; p];
            r[i % p] = (p as f64).sqrt();
            rows.push(r);
        }
        let y: Vec<f64> = (0..n).map(|i| if i % 2 == 0 { 0.9 + 0.01 * i as f64 } else { 0.05 * ((i * 7) % 5) as f64 - 0.1 }).collect();
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let ds = Dataset::from_rows(&refs, &y).unwrap();
        let link = LinkFamily::LinearGaussian { sigma: 1.0 };
        let lambda = 0.3;
        let ols = fit_mle(&ds, link).unwrap();
        let fit = fit_penalized_likelihood(&ds, link, PenaltySpec::lasso(lambda), &v(&ols.beta_hat), &EstimatorOptions { ball_radius_k: 50.0, ..Default::default() }).unwrap();
        for j in 0..p {
            let col_sq: f64 = ds.x.column(j).iter().map(|v| v * v).sum();
            let level = lambda * n as f64 / col_sq;
            let b = ols.beta_hat[j];
            let soft = b.signum() * (b.abs() - level).max(0.0);
            assert!((fit.beta_hat[j] - soft).abs() < 1e-4, "coord {j}: {} vs {soft}", fit.beta_hat[j]);
            assert_eq!(fit.active_set[j], soft == 0.0);
        }
    }
}
