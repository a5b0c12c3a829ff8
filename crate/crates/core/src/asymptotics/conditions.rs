use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::moments::CHUNK;
use crate::glm::{LinkFamily, ModelSpec};
use crate::penalties::PenaltySpec;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_PROBE_DIRECTIONS: usize = 64;
/// Slope at or below which a sequence counts as decaying at rate `n^-1/2`.
pub const RATE_SLOPE_THRESHOLD: f64 = -0.45;
const TAIL_SPREAD: f64 = 0.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateCheck {
    pub alpha_sequence: Vec<(usize, f64)>,
    pub tau_sequence: Vec<(usize, f64)>,
    pub alpha_slope: f64,
    pub tau_slope: f64,
    pub pass: bool,
}

/// Least-squares slope of `log value` against `log n`. A sequence that
/// ends at zero decays faster than any power and gets `-inf`.
pub fn loglog_slope(points: &[(usize, f64)]) -> f64 {
    if points.last().is_none_or(|p| p.1 <= 0.0) {
        return f64::NEG_INFINITY;
    }
    let pts: Vec<(f64, f64)> = points.iter().filter(|p| p.1 > 0.0).map(|&(n, v)| ((n as f64).ln(), v.ln())).collect();
    if pts.len() < 2 {
        return f64::NEG_INFINITY;
    }
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

fn check_grid(n_grid: &[usize]) -> Result<()> {
    if n_grid.len() < 4 {
        return Err(Error::InvalidOptions("n_grid needs at least 4 points".into()));
    }
    if n_grid[0] == 0 || n_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidOptions("n_grid must be positive and strictly increasing".into()));
    }
    if (n_grid[n_grid.len() - 1] as f64) < 100.0 * n_grid[0] as f64 {
        return Err(Error::InvalidOptions("n_grid must span at least two decades".into()));
    }
    Ok(())
}

/// Evaluates `alpha_n` and `tau_n` along `n_grid` with `r_n = n^-1/2`.
/// The `u`-dependent branch of `alpha_n` is taken at `u = (1, ..., 1)`;
/// the penalties are symmetric, so every sign pattern gives the same value.
pub fn check_rates(penalty: &PenaltySpec, lambda_schedule: impl Fn(usize) -> f64, beta0: &[f64], n_grid: &[usize]) -> Result<RateCheck> {
    check_grid(n_grid)?;
    let mut alpha_sequence = Vec::with_capacity(n_grid.len());
    let mut tau_sequence = Vec::with_capacity(n_grid.len());
    for &n in n_grid {
        let pen = penalty.with_lambda(lambda_schedule(n));
        pen.validate()?;
        let r = 1.0 / (n as f64).sqrt();
        let slope_part = beta0.iter().filter(|b| **b != 0.0).map(|&b| pen.derivative(b).abs()).fold(0.0, f64::max);
        let probe = vec![r; beta0.len()];
        let alpha = slope_part.max(pen.value(&probe) / r);
        let tau = beta0.iter().map(|&b| pen.value_scalar(b)).fold(0.0, f64::max);
        alpha_sequence.push((n, alpha));
        tau_sequence.push((n, tau));
    }
    let alpha_slope = loglog_slope(&alpha_sequence);
    let tau_slope = loglog_slope(&tau_sequence);
    Ok(RateCheck {
        pass: alpha_slope <= RATE_SLOPE_THRESHOLD && tau_slope <= RATE_SLOPE_THRESHOLD,
        alpha_sequence,
        tau_sequence,
        alpha_slope,
        tau_slope,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub n: usize,
    pub near_zero_sup: f64,
    pub sign_sup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignProbe {
    pub rows: Vec<ProbeRow>,
    /// Slope of the raw near-zero term.
    pub near_zero_slope: f64,
    /// Slope of the near-zero term divided by `r_n`; must be negative.
    pub near_zero_ratio_slope: f64,
    pub sign_slope: f64,
}

/// `count` unit directions in `R^p`: both signs for `p = 1`, equally spaced
/// angles for `p = 2`, Halton points pushed through the normal quantile
/// function and normalized otherwise.
pub fn probe_directions(p: usize, count: usize) -> Vec<DVector<f64>> {
    match p {
        1 => (0..count).map(|k| DVector::from_element(1, if k % 2 == 0 { 1.0 } else { -1.0 })).collect(),
        2 => (0..count)
            .map(|k| {
                let a = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                DVector::from_row_slice(&[a.cos(), a.sin()])
            })
            .collect(),
        _ => {
            let primes = first_primes(p);
            let normal = Normal::standard();
            (1..=count)
                .map(|k| {
                    let z = DVector::from_fn(p, |j, _| normal.inverse_cdf(halton(k, primes[j])));
                    let norm = z.norm();
                    z / norm
                })
                .collect()
        }
    }
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

fn first_primes(k: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(k);
    let mut c = 2;
    while out.len() < k {
        if out.iter().all(|&q| c % q != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}

/// Conditional expectations given `x` of the near-zero and sign terms,
/// where `a = r_n x^T u` and `xu = x^T u`; the response noise is integrated
/// out exactly.
fn conditional_terms(link: LinkFamily, theta0: f64, xu: f64, a: f64) -> (f64, f64) {
    match link {
        LinkFamily::LinearGaussian { sigma } => {
            let z = a / sigma;
            let near = sigma / (2.0 * std::f64::consts::PI).sqrt() * (1.0 - (-0.5 * z * z).exp());
            let sign = xu.abs() * (normal_cdf(z.abs()) - 0.5);
            (near, sign)
        }
        LinkFamily::Logistic => {
            let pi = link.b1(theta0);
            if a >= 0.0 {
                let hit = if 1.0 - pi <= a { 1.0 } else { 0.0 };
                (pi * (1.0 - pi) * hit, xu * pi * hit)
            } else {
                let hit = if pi <= -a { 1.0 } else { 0.0 };
                (pi * (1.0 - pi) * hit, -xu * (1.0 - pi) * hit)
            }
        }
    }
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2)
}

fn draw_covariates(model: &ModelSpec, mc_samples: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let sampler = model.covariates.sampler()?;
    let p = model.p();
    let chunks = mc_samples.div_ceil(CHUNK);
    let blocks: Vec<Vec<Vec<f64>>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let len = CHUNK.min(mc_samples - c * CHUNK);
            let mut rng = rng::substream(seed, c as u64);
            (0..len)
                .map(|_| {
                    let mut x = vec![0.0; p];
                    sampler.sample_into(&mut rng, &mut x);
                    x
                })
                .collect()
        })
        .collect();
    Ok(blocks.into_iter().flatten().collect())
}

/// Monte Carlo probe of the near-zero condition and the sign condition at
/// each `n`, as the maximum over [`DEFAULT_PROBE_DIRECTIONS`] directions
/// on the sphere `||u|| = C`.
pub fn probe_sign_conditions(model: &ModelSpec, c: f64, n_grid: &[usize], mc_samples: usize, seed: u64) -> Result<SignProbe> {
    probe_sign_conditions_with(model, c, n_grid, mc_samples, seed, DEFAULT_PROBE_DIRECTIONS)
}

pub fn probe_sign_conditions_with(
    model: &ModelSpec,
    c: f64,
    n_grid: &[usize],
    mc_samples: usize,
    seed: u64,
    directions: usize,
) -> Result<SignProbe> {
    model.validate()?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidOptions("probe radius C must be positive".into()));
    }
    if mc_samples == 0 || directions == 0 || n_grid.is_empty() {
        return Err(Error::InvalidOptions("probe needs samples, directions and sample sizes".into()));
    }
    let xs = draw_covariates(model, mc_samples, seed)?;
    let dirs: Vec<DVector<f64>> = probe_directions(model.p(), directions).into_iter().map(|d| d * c).collect();
    let thetas: Vec<f64> = xs.iter().map(|x| x.iter().zip(&model.beta0).map(|(a, b)| a * b).sum()).collect();
    let rows = n_grid
        .iter()
        .map(|&n| {
            let r = 1.0 / (n as f64).sqrt();
            let per_dir: Vec<(f64, f64)> = dirs
                .par_iter()
                .map(|u| {
                    let (mut s_near, mut s_sign) = (0.0, 0.0);
                    for (x, &theta0) in xs.iter().zip(&thetas) {
                        let xu: f64 = x.iter().zip(u.iter()).map(|(a, b)| a * b).sum();
                        let (e_near, e_sign) = conditional_terms(model.link, theta0, xu, r * xu);
                        s_near += e_near;
                        s_sign += e_sign;
                    }
                    (s_near / xs.len() as f64, s_sign / xs.len() as f64)
                })
                .collect();
            ProbeRow {
                n,
                near_zero_sup: per_dir.iter().map(|d| d.0).fold(f64::NEG_INFINITY, f64::max),
                sign_sup: per_dir.iter().map(|d| d.1).fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect::<Vec<_>>();
    let raw_near: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.near_zero_sup)).collect();
    let ratio_near: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.near_zero_sup * (r.n as f64).sqrt())).collect();
    let raw_sign: Vec<(usize, f64)> = rows.iter().map(|r| (r.n, r.sign_sup)).collect();
    Ok(SignProbe { near_zero_slope: loglog_slope(&raw_near), near_zero_ratio_slope: loglog_slope(&ratio_near), sign_slope: loglog_slope(&raw_sign), rows })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailCheck {
    pub estimate: f64,
    pub standard_error: f64,
    /// Running estimates on the first `N/8`, `N/4`, `N/2` and `N` draws.
    pub prefix_estimates: Vec<f64>,
    pub stable: bool,
}

/// Monte Carlo estimate of `E ||x||^k (1 + exp|x^T beta0|)`. The estimate
/// counts as stable when the four nested prefix estimates are finite and
/// spread by less than 20% of the largest.
pub fn validate_tail(model: &ModelSpec, moment_order: u32, mc_samples: usize, seed: u64) -> Result<TailCheck> {
    model.validate()?;
    if !(1..=2).contains(&moment_order) {
        return Err(Error::InvalidOptions("moment_order must be 1 or 2".into()));
    }
    if mc_samples < 8 {
        return Err(Error::InvalidOptions("validate_tail needs at least 8 samples".into()));
    }
    let xs = draw_covariates(model, mc_samples, seed)?;
    let vals: Vec<f64> = xs
        .iter()
        .map(|x| {
            let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let theta: f64 = x.iter().zip(&model.beta0).map(|(a, b)| a * b).sum();
            norm.powi(moment_order as i32) * (1.0 + theta.abs().exp())
        })
        .collect();
    let prefix_estimates: Vec<f64> = [8, 4, 2, 1]
        .iter()
        .map(|d| {
            let len = mc_samples / d;
            vals[..len].iter().sum::<f64>() / len as f64
        })
        .collect();
    let n = vals.len() as f64;
    let estimate = prefix_estimates[3];
    let var = vals.iter().map(|v| (v - estimate).powi(2)).sum::<f64>() / (n - 1.0);
    let hi = prefix_estimates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lo = prefix_estimates.iter().cloned().fold(f64::INFINITY, f64::min);
    let stable = prefix_estimates.iter().all(|v| v.is_finite()) && (hi - lo) / hi.abs() < TAIL_SPREAD;
    Ok(TailCheck { estimate, standard_error: (var / n).sqrt(), prefix_estimates, stable })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::CovariateDistribution;

    fn grid() -> Vec<usize> {
        vec![100, 1_000, 10_000, 100_000]
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(usize, f64)> = grid().into_iter().map(|n| (n, 3.0 * (n as f64).powf(-0.5))).collect();
        assert!((loglog_slope(&pts) + 0.5).abs() < 1e-12);
        assert_eq!(loglog_slope(&[(10, 1.0), (100, 0.0)]), f64::NEG_INFINITY);
    }

    #[test]
    fn lasso_at_root_n_rate_passes() {
        let lambda0 = 2.0;
        let beta0 = [1.5];
        let check = check_rates(&PenaltySpec::lasso(1.0), |n| lambda0 / (n as f64).sqrt(), &beta0, &grid()).unwrap();
        for (&(n, a), &(_, t)) in check.alpha_sequence.iter().zip(&check.tau_sequence) {
            let r = 1.0 / (n as f64).sqrt();
            assert!((a - lambda0 * r).abs() < 1e-14);
            assert!((t - lambda0 * 1.5 * r).abs() < 1e-14);
        }
        assert!((check.alpha_slope + 0.5).abs() < 1e-9 && (check.tau_slope + 0.5).abs() < 1e-9);
        assert!(check.pass);
    }

    #[test]
    fn constant_lambda_fails() {
        let check = check_rates(&PenaltySpec::lasso(1.0), |_| 2.0, &[1.0, 0.0], &grid()).unwrap();
        assert!(check.alpha_slope.abs() < 1e-12);
        assert!(!check.pass);
    }

    #[test]
    fn bridge_rate_passes() {
        let check = check_rates(&PenaltySpec::lgamma(0.5, 1.0), |n| (n as f64).powf(-0.75), &[1.0, 0.0], &grid()).unwrap();
        assert!(check.pass, "{check:?}");
        assert!((check.alpha_slope + 0.5).abs() < 1e-9);
    }

    #[test]
    fn grid_requirements() {
        assert!(check_rates(&PenaltySpec::lasso(1.0), |_| 1.0, &[1.0], &[10, 100, 1000]).is_err());
        assert!(check_rates(&PenaltySpec::lasso(1.0), |_| 1.0, &[1.0], &[10, 20, 30, 40]).is_err());
    }

    #[test]
    fn directions_lie_on_the_unit_sphere() {
        for p in 1..5 {
            let d = probe_directions(p, 64);
            assert_eq!(d.len(), 64);
            assert!(d.iter().all(|u| (u.norm() - 1.0).abs() < 1e-12));
        }
    }

    #[test]
    fn conditional_terms_match_simulation() {
        use rand::Rng;
        use rand_distr::StandardNormal;
        let mut rng = rng::stream(5);
        let sigma = 1.3;
        for &(xu, r) in &[(2.0, 0.3), (-1.5, 0.5)] {
            let a: f64 = r * xu;
            let (e_near, e_sign) = conditional_terms(LinkFamily::LinearGaussian { sigma }, 0.0, xu, a);
            let n = 400_000;
            let (mut s_near, mut s_sign) = (0.0, 0.0);
            for _ in 0..n {
                let e: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
                let ind = (if 0.0 <= e && e <= a { 1.0 } else { 0.0 }) - (if a <= e && e <= 0.0 { 1.0 } else { 0.0 });
                s_near += e * ind;
                s_sign += xu * ind;
            }
            assert!((s_near / n as f64 - e_near).abs() < 3e-3, "{} vs {e_near}", s_near / n as f64);
            assert!((s_sign / n as f64 - e_sign).abs() < 6e-3, "{} vs {e_sign}", s_sign / n as f64);
        }
    }

    #[test]
    fn linear_probe_decays() {
        let model = ModelSpec::new(LinkFamily::LinearGaussian { sigma: 1.0 }, vec![1.0, 0.0], CovariateDistribution::standard_gaussian(2)).unwrap();
        let probe = probe_sign_conditions(&model, 1.0, &grid(), 20_000, 1).unwrap();
        assert!((probe.near_zero_slope + 1.0).abs() < 0.05, "{probe:?}");
        assert!(probe.near_zero_ratio_slope < -0.4);
        assert!(probe.sign_slope < -0.4);
    }

    #[test]
    fn degenerate_covariates_give_zero() {
        let model = ModelSpec::new(
            LinkFamily::Logistic,
            vec![1.0, 2.0],
            CovariateDistribution::UniformBox { lower: vec![0.0, 0.0], upper: vec![0.0, 0.0] },
        )
        .unwrap();
        let probe = probe_sign_conditions(&model, 2.0, &grid(), 1_000, 1).unwrap();
        assert!(probe.rows.iter().all(|r| r.near_zero_sup == 0.0 && r.sign_sup == 0.0));
        assert_eq!(probe.sign_slope, f64::NEG_INFINITY);
    }

    #[test]
    fn tail_checks() {
        let bounded = ModelSpec::new(
            LinkFamily::Logistic,
            vec![3.0, -2.0],
            CovariateDistribution::UniformBox { lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0] },
        )
        .unwrap();
        assert!(validate_tail(&bounded, 2, 40_000, 3).unwrap().stable);
        let gaussian = ModelSpec::new(LinkFamily::Logistic, vec![0.3, 0.2], CovariateDistribution::standard_gaussian(2)).unwrap();
        let t = validate_tail(&gaussian, 1, 40_000, 3).unwrap();
        assert!(t.stable && t.standard_error > 0.0);
        let heavy = ModelSpec::new(LinkFamily::Logistic, vec![3.0, 3.0], CovariateDistribution::HeavyTailed { scale: vec![1.0, 1.0] }).unwrap();
        assert!(!validate_tail(&heavy, 2, 40_000, 3).unwrap().stable);
        assert!(validate_tail(&gaussian, 3, 40_000, 3).is_err());
    }
}
