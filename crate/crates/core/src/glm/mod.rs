//! Exponential-family model definitions shared by every other module.
//!
//! Only the cumulant function `b` of the canonical-link density
//! `exp{y theta - b(theta) + c(y, phi)}` matters for estimation, so a
//! [`LinkFamily`] is just `b` and its first three derivatives. For the
//! Gaussian family the noise level `sigma` is used by the sampler and the
//! moment computations only; it never enters `b`.

pub(crate) mod io;

pub use io::{read_dataset, read_metadata, write_dataset, DatasetMetadata};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::rng::{self, StreamRng};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LinkFamily {
    LinearGaussian { sigma: f64 },
    Logistic,
}

impl LinkFamily {
    pub fn name(&self) -> &'static str {
        match self {
            LinkFamily::LinearGaussian { .. } => "linear_gaussian",
            LinkFamily::Logistic => "logistic",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            LinkFamily::LinearGaussian { sigma } if !(sigma.is_finite() && sigma > 0.0) => Err(
                Error::InvalidModel(format!("sigma must be positive and finite, got {sigma}")),
            ),
            _ => Ok(()),
        }
    }

    /// Cumulant function `b(theta)`.
    #[inline]
    pub fn b(&self, theta: f64) -> f64 {
        match self {
            LinkFamily::LinearGaussian { .. } => 0.5 * theta * theta,
            // log(1 + e^t), split so neither branch can overflow
            LinkFamily::Logistic => {
                if theta <= 0.0 {
                    theta.exp().ln_1p()
                } else {
                    theta + (-theta).exp().ln_1p()
                }
            }
        }
    }

    /// Conditional mean `b'(theta)`.
    #[inline]
    pub fn b1(&self, theta: f64) -> f64 {
        match self {
            LinkFamily::LinearGaussian { .. } => theta,
            LinkFamily::Logistic => sigmoid(theta),
        }
    }

    /// Conditional variance function `b''(theta)`.
    #[inline]
    pub fn b2(&self, theta: f64) -> f64 {
        match self {
            LinkFamily::LinearGaussian { .. } => 1.0,
            LinkFamily::Logistic => {
                let e = (-theta.abs()).exp();
                e / ((1.0 + e) * (1.0 + e))
            }
        }
    }

    #[inline]
    pub fn b3(&self, theta: f64) -> f64 {
        match self {
            LinkFamily::LinearGaussian { .. } => 0.0,
            LinkFamily::Logistic => -self.b2(theta) * (0.5 * theta).tanh(),
        }
    }
}

#[inline]
pub fn sigmoid(theta: f64) -> f64 {
    if theta >= 0.0 {
        1.0 / (1.0 + (-theta).exp())
    } else {
        let e = theta.exp();
        e / (1.0 + e)
    }
}

/// Law of a single covariate row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovariateDistribution {
    /// `N(mean, covariance)`.
    Gaussian { mean: Vec<f64>, covariance: Vec<Vec<f64>> },
    /// Independent uniforms on `[lower_j, upper_j]`; `lower_j == upper_j` is a point mass.
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    /// `base + shift`, used to build designs that are not sign neutral.
    Shifted { base: Box<CovariateDistribution>, shift: Vec<f64> },
    /// `scale_j * Z_j / U` with `Z ~ N(0, I)` and a single `U ~ Uniform(0, 1]`
    /// per row. Polynomial tails, so `E exp(|x^T beta|)` diverges.
    HeavyTailed { scale: Vec<f64> },
}

impl CovariateDistribution {
    pub fn standard_gaussian(p: usize) -> Self {
        let covariance = (0..p)
            .map(|i| (0..p).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        CovariateDistribution::Gaussian { mean: vec![0.0; p], covariance }
    }

    pub fn shifted(self, shift: Vec<f64>) -> Self {
        CovariateDistribution::Shifted { base: Box::new(self), shift }
    }

    pub fn dim(&self) -> usize {
        match self {
            CovariateDistribution::Gaussian { mean, .. } => mean.len(),
            CovariateDistribution::UniformBox { lower, .. } => lower.len(),
            CovariateDistribution::Shifted { shift, .. } => shift.len(),
            CovariateDistribution::HeavyTailed { scale } => scale.len(),
        }
    }

    /// Validates the distribution and precomputes what sampling needs.
    pub fn sampler(&self) -> Result<CovariateSampler> {
        let bad = |m: String| Err(Error::InvalidModel(m));
        match self {
            CovariateDistribution::Gaussian { mean, covariance } => {
                let p = mean.len();
                if covariance.len() != p || covariance.iter().any(|r| r.len() != p) {
                    return bad(format!("covariance must be {p}x{p}"));
                }
                let cov = DMatrix::from_fn(p, p, |i, j| covariance[i][j]);
                if (&cov - cov.transpose()).amax() > 1e-12 * (1.0 + cov.amax()) {
                    return bad("covariance is not symmetric".into());
                }
                let chol = cov.clone().cholesky().ok_or_else(|| {
                    Error::InvalidModel("covariance is not positive definite".into())
                })?;
                Ok(CovariateSampler::Gaussian {
                    mean: DVector::from_row_slice(mean),
                    factor: chol.l(),
                })
            }
            CovariateDistribution::UniformBox { lower, upper } => {
                if lower.len() != upper.len() {
                    return bad("uniform box bounds differ in length".into());
                }
                if lower.iter().zip(upper).any(|(l, u)| !(l <= u) || !l.is_finite() || !u.is_finite()) {
                    return bad("uniform box needs finite lower <= upper".into());
                }
                Ok(CovariateSampler::UniformBox { lower: lower.clone(), upper: upper.clone() })
            }
            CovariateDistribution::Shifted { base, shift } => {
                if base.dim() != shift.len() {
                    return bad("shift length differs from base dimension".into());
                }
                Ok(CovariateSampler::Shifted { base: Box::new(base.sampler()?), shift: shift.clone() })
            }
            CovariateDistribution::HeavyTailed { scale } => {
                if scale.iter().any(|s| !s.is_finite()) {
                    return bad("heavy-tailed scale must be finite".into());
                }
                Ok(CovariateSampler::HeavyTailed { scale: scale.clone() })
            }
        }
    }
}

/// Prepared form of a [`CovariateDistribution`] (Cholesky factor cached).
#[derive(Debug, Clone)]
pub enum CovariateSampler {
    Gaussian { mean: DVector<f64>, factor: DMatrix<f64> },
    UniformBox { lower: Vec<f64>, upper: Vec<f64> },
    Shifted { base: Box<CovariateSampler>, shift: Vec<f64> },
    HeavyTailed { scale: Vec<f64> },
}

impl CovariateSampler {
    pub fn dim(&self) -> usize {
        match self {
            CovariateSampler::Gaussian { mean, .. } => mean.len(),
            CovariateSampler::UniformBox { lower, .. } => lower.len(),
            CovariateSampler::Shifted { shift, .. } => shift.len(),
            CovariateSampler::HeavyTailed { scale } => scale.len(),
        }
    }

    /// Writes one draw into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            CovariateSampler::Gaussian { mean, factor } => {
                let p = mean.len();
                let z: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
                for i in 0..p {
                    let mut acc = mean[i];
                    for (k, zk) in z.iter().enumerate().take(i + 1) {
                        acc += factor[(i, k)] * zk;
                    }
                    out[i] = acc;
                }
            }
            CovariateSampler::UniformBox { lower, upper } => {
                for (j, o) in out.iter_mut().enumerate() {
                    let u: f64 = rng.random();
                    *o = lower[j] + (upper[j] - lower[j]) * u;
                }
            }
            CovariateSampler::Shifted { base, shift } => {
                base.sample_into(rng, out);
                for (o, s) in out.iter_mut().zip(shift) {
                    *o += s;
                }
            }
            CovariateSampler::HeavyTailed { scale } => {
                let u: f64 = 1.0 - rng.random::<f64>();
                for (o, s) in out.iter_mut().zip(scale) {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = s * z / u;
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub link: LinkFamily,
    pub beta0: Vec<f64>,
    pub covariates: CovariateDistribution,
}

impl ModelSpec {
    pub fn new(link: LinkFamily, beta0: Vec<f64>, covariates: CovariateDistribution) -> Result<Self> {
        let model = ModelSpec { link, beta0, covariates };
        model.validate()?;
        Ok(model)
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    pub fn beta0_vec(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.beta0)
    }

    pub fn validate(&self) -> Result<()> {
        self.link.validate()?;
        if self.beta0.is_empty() {
            return Err(Error::InvalidModel("beta0 must have at least one component".into()));
        }
        if self.beta0.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidModel("beta0 must be finite".into()));
        }
        if self.covariates.dim() != self.p() {
            return Err(Error::InvalidModel(format!(
                "covariate dimension {} differs from p = {}",
                self.covariates.dim(),
                self.p()
            )));
        }
        self.covariates.sampler().map(|_| ())
    }

    /// Draws a response given the true linear predictor.
    pub fn sample_response<R: Rng + ?Sized>(&self, rng: &mut R, theta0: f64) -> f64 {
        match self.link {
            LinkFamily::LinearGaussian { sigma } => {
                let z: f64 = rng.sample(StandardNormal);
                theta0 + sigma * z
            }
            LinkFamily::Logistic => {
                let u: f64 = rng.random();
                if u < self.link.b1(theta0) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// `n` observations `(x_i, y_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    pub seed: u64,
    pub model_provenance: Option<ModelSpec>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>, seed: u64, model_provenance: Option<ModelSpec>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::InvalidDataset("need n >= 1 and p >= 1".into()));
        }
        if y.len() != x.nrows() {
            return Err(Error::dims(x.nrows(), y.len()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("entries must be finite".into()));
        }
        if let Some(model) = &model_provenance {
            if model.p() != x.ncols() {
                return Err(Error::dims(model.p(), x.ncols()));
            }
            if model.link == LinkFamily::Logistic && y.iter().any(|&v| v != 0.0 && v != 1.0) {
                return Err(Error::InvalidDataset("logistic responses must be 0 or 1".into()));
            }
        }
        Ok(Dataset { x, y, seed, model_provenance })
    }

    /// Convenience constructor from row slices, without provenance.
    pub fn from_rows(rows: &[&[f64]], y: &[f64]) -> Result<Self> {
        let p = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::InvalidDataset("rows have different lengths".into()));
        }
        let x = DMatrix::from_fn(rows.len(), p, |i, j| rows[i][j]);
        Dataset::new(x, DVector::from_row_slice(y), 0, None)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

fn check_beta(p: usize, beta: &DVector<f64>) -> Result<()> {
    if beta.len() != p {
        return Err(Error::dims(p, beta.len()));
    }
    Ok(())
}

/// `x_i^T beta` for every row.
pub fn linear_predictor(dataset: &Dataset, beta: &DVector<f64>) -> Result<DVector<f64>> {
    check_beta(dataset.p(), beta)?;
    Ok(&dataset.x * beta)
}

/// `e_i = y_i - b'(x_i^T beta)`; at the true `beta0` these are the errors `eps_i`.
pub fn residuals(dataset: &Dataset, beta: &DVector<f64>, link: &LinkFamily) -> Result<DVector<f64>> {
    let theta = linear_predictor(dataset, beta)?;
    Ok(DVector::from_iterator(
        dataset.n(),
        dataset.y.iter().zip(theta.iter()).map(|(y, &t)| y - link.b1(t)),
    ))
}

/// `sum_i [y_i x_i^T beta - b(x_i^T beta)]`.
pub fn loglik(dataset: &Dataset, beta: &DVector<f64>, link: &LinkFamily) -> Result<f64> {
    loglik_xy(&dataset.x, &dataset.y, beta, link)
}

/// [`loglik`] on a bare design; an empty design sums to zero.
pub fn loglik_xy(x: &DMatrix<f64>, y: &DVector<f64>, beta: &DVector<f64>, link: &LinkFamily) -> Result<f64> {
    check_beta(x.ncols(), beta)?;
    if y.len() != x.nrows() {
        return Err(Error::dims(x.nrows(), y.len()));
    }
    if x.nrows() == 0 {
        return Ok(0.0);
    }
    let theta = x * beta;
    Ok(y.iter().zip(theta.iter()).map(|(y, &t)| y * t - link.b(t)).sum())
}

/// Draws `n` i.i.d. observations; the same `(model, n, seed)` is bit-identical.
pub fn sample_dataset(model: &ModelSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidDataset("n must be at least 1".into()));
    }
    model.validate()?;
    let sampler = model.covariates.sampler()?;
    let mut rng = rng::stream(seed);
    let (x, y) = draw_observations(model, &sampler, &mut rng, n);
    Dataset::new(x, y, seed, Some(model.clone()))
}

pub(crate) fn draw_observations(
    model: &ModelSpec,
    sampler: &CovariateSampler,
    rng: &mut StreamRng,
    n: usize,
) -> (DMatrix<f64>, DVector<f64>) {
    let p = model.p();
    let mut x = DMatrix::zeros(n, p);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; p];
    for i in 0..n {
        sampler.sample_into(rng, &mut row);
        let theta0: f64 = row.iter().zip(&model.beta0).map(|(a, b)| a * b).sum();
        for (j, v) in row.iter().enumerate() {
            x[(i, j)] = *v;
        }
        y[i] = model.sample_response(rng, theta0);
    }
    (x, y)
}
