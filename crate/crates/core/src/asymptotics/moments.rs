use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::glm::{LinkFamily, ModelSpec};
use crate::rng;
use crate::{Error, Result};

/// Draws per independent Monte Carlo stream.
pub(crate) const CHUNK: usize = 4096;

pub const MIN_MC_SAMPLES: usize = 10_000;

/// Population quantities of the model at `beta0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSummary {
    /// `E b''(x^T beta0) x x^T`.
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    /// `E b''(x^T beta0) sign(eps) x`.
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    /// `E|eps|`.
    pub mean_abs_eps: f64,
    /// Covariance of the score limit `W`, i.e. `E eps^2 x x^T`.
    pub w_covariance: Vec<Vec<f64>>,
    pub mc_samples: usize,
    pub mc_standard_errors: MomentErrors,
    /// Closed forms, where the family has them.
    pub analytic: Option<AnalyticMoments>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    #[serde(rename = "M")]
    pub m: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub mean_abs_eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub mean_abs_eps: f64,
}

impl MomentSummary {
    /// Moments given directly, without Monte Carlo error.
    pub fn exact(m: DMatrix<f64>, v: DVector<f64>, mean_abs_eps: f64) -> Result<Self> {
        Self::exact_with_w(m.clone(), v, mean_abs_eps, m)
    }

    pub fn exact_with_w(m: DMatrix<f64>, v: DVector<f64>, mean_abs_eps: f64, w_cov: DMatrix<f64>) -> Result<Self> {
        let p = v.len();
        if m.shape() != (p, p) || w_cov.shape() != (p, p) {
            return Err(Error::DimensionMismatch { expected: p, found: m.nrows() });
        }
        if !(mean_abs_eps >= 0.0) {
            return Err(Error::InvalidModel("mean_abs_eps must be nonnegative".into()));
        }
        Ok(MomentSummary {
            m: to_rows(&m),
            v: v.iter().copied().collect(),
            mean_abs_eps,
            w_covariance: to_rows(&w_cov),
            mc_samples: 0,
            mc_standard_errors: MomentErrors { m: vec![vec![0.0; p]; p], v: vec![0.0; p], mean_abs_eps: 0.0 },
            analytic: None,
        })
    }

    pub fn p(&self) -> usize {
        self.v.len()
    }

    pub fn m_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.m)
    }

    pub fn w_covariance_matrix(&self) -> DMatrix<f64> {
        from_rows(&self.w_covariance)
    }

    pub fn v_vector(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.v)
    }

    pub fn max_v_standard_error(&self) -> f64 {
        self.mc_standard_errors.v.iter().fold(0.0f64, |a, &b| a.max(b))
    }

    /// The same summary with `V` replaced by zero.
    pub fn sign_neutral(&self) -> Self {
        let mut out = self.clone();
        out.v.iter_mut().for_each(|v| *v = 0.0);
        out
    }
}

pub(crate) fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub(crate) fn from_rows(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let p = rows.len();
    DMatrix::from_fn(p, p, |i, j| rows[i][j])
}

#[derive(Clone)]
struct Sums {
    count: usize,
    m: Vec<f64>,
    m_sq: Vec<f64>,
    v: Vec<f64>,
    v_sq: Vec<f64>,
    abs_eps: f64,
    abs_eps_sq: f64,
}

impl Sums {
    fn new(p: usize) -> Self {
        Sums { count: 0, m: vec![0.0; p * p], m_sq: vec![0.0; p * p], v: vec![0.0; p], v_sq: vec![0.0; p], abs_eps: 0.0, abs_eps_sq: 0.0 }
    }

    fn merge(mut self, other: &Sums) -> Self {
        self.count += other.count;
        let add = |a: &mut Vec<f64>, b: &Vec<f64>| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        add(&mut self.m, &other.m);
        add(&mut self.m_sq, &other.m_sq);
        add(&mut self.v, &other.v);
        add(&mut self.v_sq, &other.v_sq);
        self.abs_eps += other.abs_eps;
        self.abs_eps_sq += other.abs_eps_sq;
        self
    }
}

fn mean_and_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    let var = ((sum_sq / nf - mean * mean) * nf / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

/// Monte Carlo estimates of `M`, `V`, `E|eps|` from `mc_samples` draws of
/// `(x, y)`, in fixed-size chunks on independent streams.
pub fn compute_moments(model: &ModelSpec, mc_samples: usize, seed: u64) -> Result<MomentSummary> {
    model.validate()?;
    if mc_samples < MIN_MC_SAMPLES {
        return Err(Error::InvalidOptions(format!("mc_samples must be at least {MIN_MC_SAMPLES}")));
    }
    let p = model.p();
    let sampler = model.covariates.sampler()?;
    let chunks = mc_samples.div_ceil(CHUNK);
    let partial: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(mc_samples - c * CHUNK);
            let mut rng = rng::substream(rng::derive_seed(seed, &[rng::tags::MOMENTS]), c as u64);
            let mut s = Sums::new(p);
            let mut x = vec![0.0; p];
            for _ in 0..len {
                sampler.sample_into(&mut rng, &mut x);
                let theta: f64 = x.iter().zip(&model.beta0).map(|(a, b)| a * b).sum();
                let y = model.sample_response(&mut rng, theta);
                let eps = y - model.link.b1(theta);
                let w = model.link.b2(theta);
                let sg = crate::sign(eps);
                for i in 0..p {
                    for j in 0..p {
                        let t = w * x[i] * x[j];
                        s.m[i * p + j] += t;
                        s.m_sq[i * p + j] += t * t;
                    }
                    let t = w * sg * x[i];
                    s.v[i] += t;
                    s.v_sq[i] += t * t;
                }
                s.abs_eps += eps.abs();
                s.abs_eps_sq += eps * eps;
                s.count += 1;
            }
            s
        })
        .collect();
    let total = partial.iter().fold(Sums::new(p), |acc, s| acc.merge(s));
    let n = total.count;

    let mut m = DMatrix::zeros(p, p);
    let mut m_se = vec![vec![0.0; p]; p];
    for i in 0..p {
        for j in 0..p {
            let (mean, se) = mean_and_se(total.m[i * p + j], total.m_sq[i * p + j], n);
            m[(i, j)] = mean;
            m_se[i][j] = se;
        }
    }
    let m = crate::linalg::symmetrize(&m);
    let (v, v_se): (Vec<f64>, Vec<f64>) = (0..p).map(|i| mean_and_se(total.v[i], total.v_sq[i], n)).unzip();
    let (mean_abs_eps, abs_se) = mean_and_se(total.abs_eps, total.abs_eps_sq, n);

    // Var(y | x) is sigma^2 for the Gaussian family and b''(theta) for the logistic one.
    let (w_cov, analytic) = match model.link {
        LinkFamily::LinearGaussian { sigma } => (
            &m * (sigma * sigma),
            Some(AnalyticMoments { v: vec![0.0; p], mean_abs_eps: sigma * (2.0 / std::f64::consts::PI).sqrt() }),
        ),
        LinkFamily::Logistic => (m.clone(), None),
    };
    Ok(MomentSummary {
        m: to_rows(&m),
        v,
        mean_abs_eps,
        w_covariance: to_rows(&w_cov),
        mc_samples: n,
        mc_standard_errors: MomentErrors { m: m_se, v: v_se, mean_abs_eps: abs_se },
        analytic,
    })
}
