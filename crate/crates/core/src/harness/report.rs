use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ks::{ks_p_value, ks_statistic};
use super::records::{EstimatorKind, ReplicationRecord};
use crate::asymptotics::{loglog_slope, AsymptoticDraw};
use crate::glm::io::fmt17;
use crate::Result;

/// Below this many values on either side the KS comparison is flagged.
pub const KS_MIN_SAMPLE: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSizeSummary {
    pub n: usize,
    pub replications: usize,
    pub nonconverged: usize,
    /// Median of `||sqrt(n)(beta_hat - beta0)||` over converged replications.
    pub median_scaled_norm: Option<f64>,
    pub q90_scaled_norm: Option<f64>,
    pub mean_scaled_error: Vec<f64>,
    pub mean_scaled_error_se: Vec<f64>,
    /// Fraction of replications reporting each coordinate as zero.
    pub zero_rate: Vec<f64>,
    /// Fraction with every true zero estimated as zero.
    pub zero_block_rate: f64,
    /// Fraction whose estimated zero set equals the true one.
    pub support_recovery_rate: f64,
    /// Per coordinate, replications whose sign (zero counted as a sign) differs from `beta0`.
    pub sign_errors: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KsComparison {
    pub coordinate: usize,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
    pub empirical_size: usize,
    pub limit_size: usize,
    pub low_power: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub estimator: EstimatorKind,
    pub per_n: Vec<SampleSizeSummary>,
    /// Scaled errors at the largest `n` against the limit draws.
    pub ks_statistics: Vec<KsComparison>,
    /// Non-converged replications left out of the KS comparison.
    pub ks_excluded: usize,
    /// Slope of log median scaled-error norm against log n.
    pub consistency_slope: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub beta0: Vec<f64>,
    pub n_grid: Vec<usize>,
    pub limit_draws: usize,
    pub multimodal_draws: usize,
    pub fgsm: EstimatorReport,
    pub baseline_comparison: Option<EstimatorReport>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Sample quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    Some(sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]))
}

fn summarize_n(n: usize, beta0: &[f64], recs: &[&ReplicationRecord]) -> SampleSizeSummary {
    let p = beta0.len();
    let ok: Vec<&&ReplicationRecord> = recs.iter().filter(|r| r.converged).collect();
    let k = ok.len();
    let mut norms: Vec<f64> = ok.iter().map(|r| r.scaled_error.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    norms.sort_by(f64::total_cmp);
    let kf = k.max(1) as f64;
    let mean: Vec<f64> = (0..p).map(|j| ok.iter().map(|r| r.scaled_error[j]).sum::<f64>() / kf).collect();
    let se: Vec<f64> = (0..p)
        .map(|j| {
            if k < 2 {
                return 0.0;
            }
            let var = ok.iter().map(|r| (r.scaled_error[j] - mean[j]).powi(2)).sum::<f64>() / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let truth_zero: Vec<bool> = beta0.iter().map(|b| *b == 0.0).collect();
    let est_sign = |r: &ReplicationRecord, j: usize| if r.active_set[j] { 0.0 } else { crate::sign(r.beta_hat[j]) };
    SampleSizeSummary {
        n,
        replications: recs.len(),
        nonconverged: recs.len() - k,
        median_scaled_norm: quantile(&norms, 0.5).and_then(finite),
        q90_scaled_norm: quantile(&norms, 0.9).and_then(finite),
        mean_scaled_error: mean,
        mean_scaled_error_se: se,
        zero_rate: (0..p).map(|j| ok.iter().filter(|r| r.active_set[j]).count() as f64 / kf).collect(),
        zero_block_rate: ok.iter().filter(|r| (0..p).all(|j| !truth_zero[j] || r.active_set[j])).count() as f64 / kf,
        support_recovery_rate: ok.iter().filter(|r| r.active_set == truth_zero).count() as f64 / kf,
        sign_errors: (0..p).map(|j| ok.iter().filter(|r| est_sign(r, j) != crate::sign(beta0[j])).count()).collect(),
    }
}

fn estimator_report(kind: EstimatorKind, beta0: &[f64], n_grid: &[usize], records: &[ReplicationRecord], draws: &[AsymptoticDraw]) -> EstimatorReport {
    let p = beta0.len();
    let per_n: Vec<SampleSizeSummary> = n_grid
        .iter()
        .map(|&n| {
            let recs: Vec<&ReplicationRecord> = records.iter().filter(|r| r.estimator == kind && r.n == n).collect();
            summarize_n(n, beta0, &recs)
        })
        .collect();
    let largest = n_grid.last().copied().unwrap_or(0);
    let at_largest: Vec<&ReplicationRecord> = records.iter().filter(|r| r.estimator == kind && r.n == largest).collect();
    let used: Vec<&&ReplicationRecord> = at_largest.iter().filter(|r| r.converged).collect();
    let ks_statistics = if draws.is_empty() {
        Vec::new()
    } else {
        (0..p)
            .map(|j| {
                let emp: Vec<f64> = used.iter().map(|r| r.scaled_error[j]).collect();
                let lim: Vec<f64> = draws.iter().map(|d| d.u_star[j]).collect();
                let stat = finite(ks_statistic(&emp, &lim));
                KsComparison {
                    coordinate: j + 1,
                    statistic: stat,
                    p_value: stat.map(|d| ks_p_value(d, emp.len(), lim.len())),
                    empirical_size: emp.len(),
                    limit_size: lim.len(),
                    low_power: emp.len() < KS_MIN_SAMPLE || lim.len() < KS_MIN_SAMPLE,
                }
            })
            .collect()
    };
    let medians: Vec<(usize, f64)> = per_n.iter().filter_map(|s| s.median_scaled_norm.map(|m| (s.n, m))).collect();
    let consistency_slope = if medians.len() >= 2 { finite(loglog_slope(&medians)) } else { None };
    EstimatorReport { estimator: kind, per_n, ks_statistics, ks_excluded: at_largest.len() - used.len(), consistency_slope }
}

/// Report statistics; a pure function of the records and limit draws.
pub fn compute_report(beta0: &[f64], records: &[ReplicationRecord], draws: &[AsymptoticDraw]) -> ExperimentReport {
    let mut n_grid: Vec<usize> = records.iter().map(|r| r.n).collect();
    n_grid.sort_unstable();
    n_grid.dedup();
    let has_baseline = records.iter().any(|r| r.estimator == EstimatorKind::Penalized);
    ExperimentReport {
        beta0: beta0.to_vec(),
        limit_draws: draws.len(),
        multimodal_draws: draws.iter().filter(|d| d.multimodal).count(),
        fgsm: estimator_report(EstimatorKind::Fgsm, beta0, &n_grid, records, draws),
        baseline_comparison: has_baseline.then(|| estimator_report(EstimatorKind::Penalized, beta0, &n_grid, records, draws)),
        n_grid,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plotdata" => Ok(ReportFormat::PlotData),
            other => Err(format!("unknown report format `{other}`")),
        }
    }
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    Ok(serde_json::from_reader(std::io::BufReader::new(File::open(path)?))?)
}

fn opt(v: Option<f64>) -> String {
    v.map(fmt17).unwrap_or_else(|| "NaN".into())
}

fn write_series(path: &Path, header: &str, rows: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{header}")?;
    for (x, y) in rows {
        writeln!(out, "{x},{y}")?;
    }
    out.flush()?;
    Ok(())
}

/// Writes the report into `dir` and returns the files created:
/// `report.json`; `summary.csv` with one row per estimator and `n`; or
/// two-column series files for plotting.
pub fn emit_report(report: &ExperimentReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let estimators: Vec<&EstimatorReport> = std::iter::once(&report.fgsm).chain(report.baseline_comparison.as_ref()).collect();
    let p = report.beta0.len();
    match format {
        ReportFormat::Json => {
            let path = dir.join("report.json");
            let mut out = BufWriter::new(File::create(&path)?);
            serde_json::to_writer_pretty(&mut out, report)?;
            writeln!(out)?;
            out.flush()?;
            Ok(vec![path])
        }
        ReportFormat::Csv => {
            let path = dir.join("summary.csv");
            let mut out = BufWriter::new(File::create(&path)?);
            let mut cols = vec!["estimator", "n", "replications", "nonconverged", "median_scaled_norm", "q90_scaled_norm", "zero_block_rate", "support_recovery_rate"]
                .into_iter()
                .map(String::from)
                .collect::<Vec<_>>();
            cols.extend((1..=p).map(|j| format!("zero_rate_{j}")));
            cols.extend((1..=p).map(|j| format!("sign_errors_{j}")));
            writeln!(out, "{}", cols.join(","))?;
            for e in &estimators {
                for s in &e.per_n {
                    let mut f = vec![
                        e.estimator.to_string(),
                        s.n.to_string(),
                        s.replications.to_string(),
                        s.nonconverged.to_string(),
                        opt(s.median_scaled_norm),
                        opt(s.q90_scaled_norm),
                        fmt17(s.zero_block_rate),
                        fmt17(s.support_recovery_rate),
                    ];
                    f.extend(s.zero_rate.iter().map(|&v| fmt17(v)));
                    f.extend(s.sign_errors.iter().map(|v| v.to_string()));
                    writeln!(out, "{}", f.join(","))?;
                }
            }
            out.flush()?;
            Ok(vec![path])
        }
        ReportFormat::PlotData => {
            let mut paths = Vec::new();
            for e in &estimators {
                let path = dir.join(format!("plot_consistency_{}.csv", e.estimator));
                write_series(&path, "n,median_scaled_norm", e.per_n.iter().map(|s| (s.n.to_string(), opt(s.median_scaled_norm))))?;
                paths.push(path);
                let path = dir.join(format!("plot_zero_recovery_{}.csv", e.estimator));
                write_series(&path, "n,support_recovery_rate", e.per_n.iter().map(|s| (s.n.to_string(), fmt17(s.support_recovery_rate))))?;
                paths.push(path);
                if !e.ks_statistics.is_empty() {
                    let path = dir.join(format!("plot_ks_{}.csv", e.estimator));
                    write_series(&path, "coordinate,ks_statistic", e.ks_statistics.iter().map(|k| (k.coordinate.to_string(), opt(k.statistic))))?;
                    paths.push(path);
                }
            }
            Ok(paths)
        }
    }
}
