use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;

use super::config::ExperimentConfig;
use super::records::{write_draws, write_records, EstimatorKind, ReplicationRecord};
use super::report::{compute_report, emit_report, ExperimentReport, ReportFormat};
use crate::adversarial::AdversarialObjective;
use crate::asymptotics::{compute_moments, draw_limit, AsymptoticDraw, LimitProblem, MomentSummary};
use crate::estimators::{fit_fgsm, fit_penalized_likelihood, EstimateResult, EstimatorOptions};
use crate::glm::{sample_dataset, ModelSpec};
use crate::rng::{derive_seed, tags};
use crate::{Error, Result};

/// Largest tolerated share of non-converged replications per estimator.
pub const MAX_NONCONVERGED_SHARE: f64 = 0.02;

pub const RECORDS_FILE: &str = "records.csv";
pub const DRAWS_FILE: &str = "limit_draws.csv";

/// Everything an experiment produced.
#[derive(Debug, Clone)]
pub struct ExperimentRun {
    pub records: Vec<ReplicationRecord>,
    pub draws: Vec<AsymptoticDraw>,
    pub moments: Option<MomentSummary>,
    pub report: ExperimentReport,
}

/// Runs `f` on a pool with `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        Some(k) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
        None => Ok(f()),
    }
}

/// Moments for the limit law; closed forms replace Monte Carlo values where
/// the family has them.
pub fn limit_moments(model: &ModelSpec, samples: usize, seed: u64) -> Result<MomentSummary> {
    compute_moments(model, samples, seed).map(prefer_analytic)
}

pub fn prefer_analytic(mut moments: MomentSummary) -> MomentSummary {
    if let Some(a) = &moments.analytic {
        moments.v = a.v.clone();
        moments.mean_abs_eps = a.mean_abs_eps;
    }
    moments
}

fn record_from(n: usize, rep: usize, estimator: EstimatorKind, beta0: &[f64], fit: Result<EstimateResult>, wall_ms: f64) -> Result<ReplicationRecord> {
    let p = beta0.len();
    let root = (n as f64).sqrt();
    match fit {
        Ok(fit) => Ok(ReplicationRecord {
            n,
            replication_index: rep,
            estimator,
            scaled_error: fit.beta_hat.iter().zip(beta0).map(|(b, b0)| root * (b - b0)).collect(),
            beta_hat: fit.beta_hat,
            active_set: fit.active_set,
            objective_value: fit.objective_value,
            converged: fit.converged,
            wall_ms,
        }),
        Err(Error::NoConvergence { .. } | Error::NonFiniteObjective { .. }) => Ok(ReplicationRecord {
            n,
            replication_index: rep,
            estimator,
            beta_hat: vec![f64::NAN; p],
            scaled_error: vec![f64::NAN; p],
            active_set: vec![false; p],
            objective_value: f64::NAN,
            converged: false,
            wall_ms,
        }),
        Err(e) => Err(e),
    }
}

fn replicate(config: &ExperimentConfig, n: usize, rep: usize) -> Result<Vec<ReplicationRecord>> {
    let seed = config.master_seed;
    let keys = [n as u64, rep as u64];
    let data = sample_dataset(&config.model, n, derive_seed(seed, &[keys[0], keys[1], tags::DATA]))?;
    let penalty = config.penalty_at(n);
    let beta0 = config.model.beta0_vec();
    let timed = |f: &dyn Fn() -> Result<EstimateResult>| {
        let start = Instant::now();
        let out = f();
        let ms = if config.record_timing { start.elapsed().as_secs_f64() * 1e3 } else { 0.0 };
        (out, ms)
    };
    let options = |tag: u64| EstimatorOptions { seed: derive_seed(seed, &[keys[0], keys[1], tag]), ..config.estimator_options.clone() };

    let mut out = Vec::with_capacity(2);
    let objective = AdversarialObjective::new(&data, config.model.link, penalty)?;
    let fgsm_opts = options(tags::FGSM);
    let (fit, ms) = timed(&|| fit_fgsm(&objective, &beta0, &fgsm_opts));
    out.push(record_from(n, rep, EstimatorKind::Fgsm, &config.model.beta0, fit, ms)?);
    if config.baseline {
        let pen_opts = options(tags::PENALIZED);
        let (fit, ms) = timed(&|| fit_penalized_likelihood(&data, config.model.link, penalty, &beta0, &pen_opts));
        out.push(record_from(n, rep, EstimatorKind::Penalized, &config.model.beta0, fit, ms)?);
    }
    Ok(out)
}

/// All replications plus the limit draws, without touching the disk.
pub fn simulate(config: &ExperimentConfig) -> Result<(Vec<ReplicationRecord>, Vec<AsymptoticDraw>, Option<MomentSummary>)> {
    config.validate()?;
    with_threads(config.threads, || {
        let items: Vec<(usize, usize)> =
            config.n_grid.iter().flat_map(|&n| (0..config.replications).map(move |rep| (n, rep))).collect();
        let mut records: Vec<ReplicationRecord> = items
            .par_iter()
            .map(|&(n, rep)| replicate(config, n, rep))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        records.sort_by_key(|r| r.key());
        let (draws, moments) = if config.limit_draws > 0 {
            let moments = limit_moments(&config.model, config.moment_samples, derive_seed(config.master_seed, &[tags::MOMENTS]))?;
            let problem = LimitProblem::new(
                moments.clone(),
                config.penalty.case(),
                config.lambda0,
                config.model.beta0.clone(),
                config.estimator_options.ball_radius_k,
            )?;
            (draw_limit(&problem, config.limit_draws, derive_seed(config.master_seed, &[tags::LIMIT]))?, Some(moments))
        } else {
            (Vec::new(), None)
        };
        Ok((records, draws, moments))
    })?
}

fn check_convergence(records: &[ReplicationRecord]) -> Result<()> {
    for kind in [EstimatorKind::Fgsm, EstimatorKind::Penalized] {
        let total = records.iter().filter(|r| r.estimator == kind).count();
        let failed = records.iter().filter(|r| r.estimator == kind && !r.converged).count();
        if total > 0 && failed as f64 > MAX_NONCONVERGED_SHARE * total as f64 {
            return Err(Error::Experiment(format!("{failed} of {total} {kind} fits did not converge")));
        }
    }
    Ok(())
}

/// Simulates, persists `records.csv`, `limit_draws.csv` and `report.json`
/// under the output directory, and returns everything produced.
pub fn execute(config: &ExperimentConfig) -> Result<ExperimentRun> {
    let (records, draws, moments) = simulate(config)?;
    let dir: &Path = &config.output_dir;
    std::fs::create_dir_all(dir)?;
    let p = config.model.p();
    write_records(&dir.join(RECORDS_FILE), p, &records)?;
    write_draws(&dir.join(DRAWS_FILE), p, &draws)?;
    check_convergence(&records)?;
    let report = compute_report(&config.model.beta0, &records, &draws);
    emit_report(&report, ReportFormat::Json, dir)?;
    Ok(ExperimentRun { records, draws, moments, report })
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    execute(config).map(|run| run.report)
}

/// Largest `|scaled_error / sqrt(n) + beta0 - beta_hat|` over converged records.
pub fn scaled_error_discrepancy(records: &[ReplicationRecord], beta0: &[f64]) -> f64 {
    records
        .iter()
        .filter(|r| r.converged)
        .flat_map(|r| {
            let root = (r.n as f64).sqrt();
            (0..beta0.len()).map(move |j| (r.scaled_error[j] / root + beta0[j] - r.beta_hat[j]).abs())
        })
        .fold(0.0, f64::max)
}

pub(crate) fn mean_vector(rows: impl Iterator<Item = DVector<f64>>, p: usize) -> DVector<f64> {
    let (sum, count) = rows.fold((DVector::zeros(p), 0usize), |(s, c), r| (s + r, c + 1));
    sum / count.max(1) as f64
}
