use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::experiment::{execute, mean_vector, prefer_analytic};
use crate::asymptotics::{compute_moments, draw_limit, LimitProblem, PenaltyCase};
use crate::glm::io::fmt17;
use crate::glm::ModelSpec;
use crate::linalg::spd_solve;
use crate::rng::{derive_seed, tags};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleRow {
    pub lambda0: f64,
    pub replications: usize,
    /// Empirical `P{beta_hat_2 = 0}` over converged replications.
    pub zero_block_rate: f64,
    pub zero_block_se: f64,
    /// Empirical `P{estimated zero set = true zero set}`.
    pub support_recovery_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleStudy {
    pub n: usize,
    pub rows: Vec<OracleRow>,
    /// Each step along the grid drops by at most two standard errors of the difference.
    pub monotone: bool,
    pub best_zero_block_rate: f64,
}

fn binomial_se(rate: f64, k: usize) -> f64 {
    (rate * (1.0 - rate) / k.max(1) as f64).sqrt()
}

/// Zero-recovery probabilities of the estimator at the largest `n` for
/// each `lambda0`; each run persists under `output_dir/lambda0_<i>`.
pub fn oracle_study(config: &ExperimentConfig, lambda0_grid: &[f64]) -> Result<OracleStudy> {
    config.validate()?;
    let beta0 = &config.model.beta0;
    if !beta0.iter().any(|b| *b == 0.0) || !beta0.iter().any(|b| *b != 0.0) {
        return Err(Error::Config("oracle study needs beta0 with both zero and nonzero components".into()));
    }
    if lambda0_grid.is_empty() {
        return Err(Error::Config("lambda0 grid is empty".into()));
    }
    let n = config.largest_n();
    let mut rows = Vec::with_capacity(lambda0_grid.len());
    for (i, &lambda0) in lambda0_grid.iter().enumerate() {
        let mut c = config.clone();
        c.lambda0 = lambda0;
        c.n_grid = vec![n];
        c.output_dir = config.output_dir.join(format!("lambda0_{i}"));
        let run = execute(&c)?;
        let s = &run.report.fgsm.per_n[0];
        let k = s.replications - s.nonconverged;
        rows.push(OracleRow {
            lambda0,
            replications: k,
            zero_block_rate: s.zero_block_rate,
            zero_block_se: binomial_se(s.zero_block_rate, k),
            support_recovery_rate: s.support_recovery_rate,
        });
    }
    let monotone = rows.windows(2).all(|w| {
        let se = (w[0].zero_block_se.powi(2) + w[1].zero_block_se.powi(2)).sqrt();
        w[1].zero_block_rate >= w[0].zero_block_rate - 2.0 * se
    });
    let best_zero_block_rate = rows.iter().map(|r| r.zero_block_rate).fold(0.0, f64::max);
    Ok(OracleStudy { n, rows, monotone, best_zero_block_rate })
}

pub fn write_oracle_table(path: &Path, study: &OracleStudy) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "lambda0,zero_block_rate,zero_block_se,support_recovery_rate,replications")?;
    for r in &study.rows {
        writeln!(out, "{},{},{},{},{}", fmt17(r.lambda0), fmt17(r.zero_block_rate), fmt17(r.zero_block_se), fmt17(r.support_recovery_rate), r.replications)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignRow {
    pub shift: Vec<f64>,
    #[serde(rename = "V")]
    pub v: Vec<f64>,
    pub v_norm: f64,
    pub v_max_se: f64,
    /// `lambda0 ||beta0||_gamma^gamma M^-1 V`; zero for SCAD.
    pub predicted_bias: Vec<f64>,
    pub mean_scaled_error: Vec<f64>,
    pub mean_scaled_error_se: Vec<f64>,
    /// Mean of the limit maximizer with `V` set to zero.
    pub sign_neutral_limit_mean: Vec<f64>,
    /// Mean scaled error minus the sign-neutral limit mean.
    pub excess_bias: Vec<f64>,
    pub excess_bias_norm: f64,
    pub cosine: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignStudy {
    pub n: usize,
    pub rows: Vec<SignRow>,
    /// Correlation between `||V||` and the excess-bias norm across shifts.
    pub norm_bias_correlation: Option<f64>,
}

fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> Option<f64> {
    let d = a.norm() * b.norm();
    (d > 0.0).then(|| a.dot(b) / d)
}

fn correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let k = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / k;
    let my = ys.iter().sum::<f64>() / k;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// For each covariate shift: `V`, the predicted extra bias
/// `lambda0 ||beta0||_gamma^gamma M^-1 V`, and the measured bias of the
/// estimator in excess of what the limit law produces without `V`. Runs at
/// the largest `n` of `config`, whose model is replaced by `model` with
/// shifted covariates; each run persists under `output_dir/shift_<i>`.
pub fn sign_neutrality_study(model: &ModelSpec, shift_grid: &[Vec<f64>], config: &ExperimentConfig) -> Result<SignStudy> {
    config.validate()?;
    model.validate()?;
    let n = config.largest_n();
    let p = model.p();
    let case = config.penalty.case();
    let mut rows = Vec::with_capacity(shift_grid.len());
    for (i, shift) in shift_grid.iter().enumerate() {
        if shift.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: shift.len() });
        }
        let mut c = config.clone();
        c.model = ModelSpec::new(model.link, model.beta0.clone(), model.covariates.clone().shifted(shift.clone()))?;
        c.n_grid = vec![n];
        c.limit_draws = 0;
        c.baseline = false;
        c.output_dir = config.output_dir.join(format!("shift_{i}"));
        let run = execute(&c)?;
        let seed = derive_seed(config.master_seed, &[tags::MOMENTS, i as u64]);
        // the raw Monte Carlo V is reported: an analytic zero would hide sampling noise
        let raw = compute_moments(&c.model, config.moment_samples, seed)?;
        let moments = prefer_analytic(raw.clone());
        let problem = LimitProblem::new(moments.clone(), case, config.lambda0, model.beta0.clone(), config.estimator_options.ball_radius_k)?;
        let predicted = if matches!(case, PenaltyCase::Scad) {
            DVector::zeros(p)
        } else {
            spd_solve(&moments.m_matrix(), &moments.v_vector())? * (config.lambda0 * problem.beta0_gamma_norm())
        };
        let neutral = LimitProblem { moments: moments.sign_neutral(), ..problem };
        let draw_count = config.limit_draws.max(1);
        let draws = draw_limit(&neutral, draw_count, derive_seed(config.master_seed, &[tags::LIMIT, i as u64]))?;
        let reference = mean_vector(draws.iter().map(|d| DVector::from_row_slice(&d.u_star)), p);
        let summary = &run.report.fgsm.per_n[0];
        let measured = DVector::from_row_slice(&summary.mean_scaled_error);
        let excess = &measured - &reference;
        let v = DVector::from_row_slice(&raw.v);
        rows.push(SignRow {
            shift: shift.clone(),
            v_norm: v.norm(),
            v: raw.v.clone(),
            v_max_se: raw.max_v_standard_error(),
            predicted_bias: predicted.iter().copied().collect(),
            mean_scaled_error: summary.mean_scaled_error.clone(),
            mean_scaled_error_se: summary.mean_scaled_error_se.clone(),
            sign_neutral_limit_mean: reference.iter().copied().collect(),
            excess_bias_norm: excess.norm(),
            cosine: cosine(&excess, &predicted),
            excess_bias: excess.iter().copied().collect(),
        });
    }
    let norms: Vec<f64> = rows.iter().map(|r| r.v_norm).collect();
    let biases: Vec<f64> = rows.iter().map(|r| r.excess_bias_norm).collect();
    Ok(SignStudy { n, norm_bias_correlation: correlation(&norms, &biases), rows })
}

pub fn write_sign_table(path: &Path, study: &SignStudy) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    let p = study.rows.first().map_or(0, |r| r.v.len());
    let mut cols = Vec::new();
    cols.extend((1..=p).map(|j| format!("shift_{j}")));
    cols.push("v_norm".into());
    cols.push("v_max_se".into());
    cols.extend((1..=p).map(|j| format!("predicted_bias_{j}")));
    cols.extend((1..=p).map(|j| format!("excess_bias_{j}")));
    cols.push("cosine".into());
    writeln!(out, "{}", cols.join(","))?;
    for r in &study.rows {
        let mut f: Vec<String> = r.shift.iter().map(|&v| fmt17(v)).collect();
        f.push(fmt17(r.v_norm));
        f.push(fmt17(r.v_max_se));
        f.extend(r.predicted_bias.iter().map(|&v| fmt17(v)));
        f.extend(r.excess_bias.iter().map(|&v| fmt17(v)));
        f.push(r.cosine.map(fmt17).unwrap_or_else(|| "NaN".into()));
        writeln!(out, "{}", f.join(","))?;
    }
    out.flush()?;
    Ok(())
}
