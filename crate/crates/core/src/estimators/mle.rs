use nalgebra::DVector;

use super::EstimateResult;
use crate::glm::{loglik, Dataset, LinkFamily};
use crate::linalg::weighted_gram;
use crate::{Error, Result};

const SCORE_TOLERANCE: f64 = 1e-8;
const MAX_SCORING_STEPS: usize = 100;
const SEPARATION_LOGLIK: f64 = 1e-6;

fn column_rank(dataset: &Dataset) -> usize {
    if dataset.n() < dataset.p() {
        return dataset.n();
    }
    let r = dataset.x.clone().qr().r();
    let diag: Vec<f64> = r.diagonal().iter().map(|v| v.abs()).collect();
    let top = diag.iter().fold(0.0f64, |m, &v| m.max(v));
    diag.iter().filter(|&&v| v > 1e-10 * top).count()
}

/// Unpenalized maximum likelihood: least squares for the Gaussian family,
/// Fisher scoring with step halving for the logistic family.
pub fn fit_mle(dataset: &Dataset, link: LinkFamily) -> Result<EstimateResult> {
    let p = dataset.p();
    let rank = column_rank(dataset);
    if rank < p {
        return Err(Error::RankDeficient { rank, p });
    }
    let (beta, iterations) = match link {
        LinkFamily::LinearGaussian { .. } => {
            let qr = dataset.x.clone().qr();
            let qty = qr.q().tr_mul(&dataset.y);
            let beta = qr
                .r()
                .solve_upper_triangular(&qty)
                .ok_or_else(|| Error::Singular("triangular factor".into()))?;
            (beta, 1)
        }
        LinkFamily::Logistic => scoring(dataset, link)?,
    };
    let objective_value = loglik(dataset, &beta, &link)?;
    // no true parameter here, so zeros are judged against the estimate's own scale
    let thr = 1e-6 * (1.0 + beta.amax());
    Ok(EstimateResult {
        active_set: beta.iter().map(|b| b.abs() <= thr).collect(),
        beta_hat: beta.iter().copied().collect(),
        objective_value,
        converged: true,
        iterations_used: iterations,
        restart_index: 0,
    })
}

fn scoring(dataset: &Dataset, link: LinkFamily) -> Result<(DVector<f64>, usize)> {
    let mut beta = DVector::zeros(dataset.p());
    let mut ll = loglik(dataset, &beta, &link)?;
    for iter in 0..MAX_SCORING_STEPS {
        let theta = &dataset.x * &beta;
        let resid = DVector::from_iterator(theta.len(), dataset.y.iter().zip(theta.iter()).map(|(y, &t)| y - link.b1(t)));
        let score = dataset.x.tr_mul(&resid);
        if ll > -SEPARATION_LOGLIK {
            // a log-likelihood this close to its supremum 0 only happens under separation
            break;
        }
        if score.amax() <= SCORE_TOLERANCE {
            return Ok((beta, iter));
        }
        let w: Vec<f64> = theta.iter().map(|&t| link.b2(t)).collect();
        let info = weighted_gram(&dataset.x, &w);
        let Some(step) = info.cholesky().map(|c| c.solve(&score)) else {
            return Err(Error::NoConvergence { what: "logistic scoring", iterations: iter });
        };
        let mut t = 1.0;
        loop {
            let cand = &beta + &step * t;
            let lc = loglik(dataset, &cand, &link)?;
            if lc >= ll || t < 1e-10 {
                if lc < ll {
                    // stuck at working precision
                    return Ok((beta, iter));
                }
                beta = cand;
                ll = lc;
                break;
            }
            t *= 0.5;
        }
        if beta.amax() > 1e6 {
            break;
        }
    }
    Err(Error::NoConvergence { what: "logistic scoring", iterations: MAX_SCORING_STEPS })
}
