//! `fgsmglm`: command-line front end to the estimation library and the
//! experiment harness. Every subcommand reads a TOML config file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use fgsm_glm::adversarial::AdversarialObjective;
use fgsm_glm::asymptotics::{
    check_rates, compute_moments, draw_limit, probe_sign_conditions, LambdaSchedule, LimitProblem, MomentSummary, PenaltyCase,
};
use fgsm_glm::estimators::{fit_fgsm, fit_mle, fit_penalized_likelihood, EstimatorOptions};
use fgsm_glm::glm::{read_dataset, read_metadata, sample_dataset, write_dataset, Dataset, LinkFamily, ModelSpec};
use fgsm_glm::harness::{
    compute_report, emit_report, oracle_study, prefer_analytic, read_draws, read_records, run_experiment, sign_neutrality_study,
    with_threads, write_oracle_table, write_sign_table, ExperimentConfig, ExperimentReport, PenaltyFamily, ReportFormat, DRAWS_FILE,
    RECORDS_FILE,
};
use fgsm_glm::penalties::PenaltySpec;
use fgsm_glm::Error;

const EXIT_FAILURE: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_BREACH: u8 = 3;

#[derive(Parser)]
#[command(name = "fgsmglm", version, about = "Generalized FGSM estimation for GLMs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output file or directory (meaning depends on the subcommand).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Exit with status 3 when an acceptance threshold is breached.
    #[arg(long)]
    check: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one estimator to a dataset and print the estimate as JSON.
    Estimate(Common),
    /// Write the adversarially perturbed covariates at a given beta.
    Perturb(Common),
    /// Draw a dataset from a model.
    Sample(Common),
    /// Population moments, limit-law draws and condition probes.
    Limit(Common),
    /// Replicated fits over a grid of sample sizes.
    Experiment(Common),
    /// Zero-recovery probability over a grid of lambda0 values.
    Oracle(Common),
    /// Bias induced by sign imbalance over a grid of covariate shifts.
    Signstudy(Common),
    /// Recompute the report from persisted records.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// json, csv, plotdata or all.
    #[arg(long, default_value = "all")]
    format: String,
}

enum Failure {
    Config(String),
    Breach(String),
    Other(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_)
            | Error::InvalidModel(_)
            | Error::InvalidPenalty(_)
            | Error::InvalidOptions(_)
            | Error::InvalidDataset(_)
            | Error::DimensionMismatch { .. }
            | Error::Format { .. } => Failure::Config(e.to_string()),
            other => Failure::Other(other.to_string()),
        }
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))
}

/// Paths in a config are relative to the config file.
fn resolve(config: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        config.parent().unwrap_or(Path::new(".")).join(p)
    }
}

fn print_json<T: Serialize>(value: &T, out: Option<&Path>) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Failure::Other(e.to_string()))?;
    match out {
        Some(path) => std::fs::write(path, text + "\n").map_err(|e| Failure::Other(e.to_string())),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

#[derive(Deserialize, Clone, Copy, PartialEq)]
#[serde(rename_all = "lowercase")]
enum EstimatorChoice {
    Fgsm,
    Penalized,
    Mle,
}

#[derive(Deserialize)]
struct EstimateConfig {
    data: PathBuf,
    #[serde(default = "default_estimator")]
    estimator: EstimatorChoice,
    /// Taken from the dataset metadata when absent.
    link: Option<LinkFamily>,
    penalty: Option<PenaltySpec>,
    /// Ball centre; defaults to beta0 from the metadata, then to the MLE.
    center: Option<Vec<f64>>,
    #[serde(default)]
    estimator_options: EstimatorOptions,
}

fn default_estimator() -> EstimatorChoice {
    EstimatorChoice::Fgsm
}

#[derive(Serialize)]
struct EstimateOutput {
    beta_hat: Vec<f64>,
    objective: f64,
    converged: bool,
    active_set: Vec<bool>,
    iterations: usize,
    restart_index: usize,
}

fn dataset_link(path: &Path, link: Option<LinkFamily>) -> CliResult<(Dataset, LinkFamily, Option<Vec<f64>>)> {
    let meta = read_metadata(path)?;
    let link = link
        .or_else(|| meta.as_ref().and_then(|m| m.link()))
        .ok_or_else(|| Failure::Config("link family not given and not in the dataset metadata".into()))?;
    let data = read_dataset(path)?;
    Ok((data, link, meta.and_then(|m| m.beta0)))
}

fn estimate(args: &Common) -> CliResult<()> {
    let cfg: EstimateConfig = load(&args.config)?;
    let (data, link, beta0) = dataset_link(&resolve(&args.config, &cfg.data), cfg.link)?;
    let mut opts = cfg.estimator_options.clone();
    if let Some(seed) = args.seed {
        opts.seed = seed;
    }
    let fit = with_threads(args.threads, || -> CliResult<_> {
        if cfg.estimator == EstimatorChoice::Mle {
            return Ok(fit_mle(&data, link)?);
        }
        let penalty = cfg.penalty.ok_or_else(|| Failure::Config("penalty is required for this estimator".into()))?;
        let center = match cfg.center.clone().or(beta0) {
            Some(c) => DVector::from_vec(c),
            None => DVector::from_vec(fit_mle(&data, link)?.beta_hat),
        };
        Ok(match cfg.estimator {
            EstimatorChoice::Fgsm => fit_fgsm(&AdversarialObjective::new(&data, link, penalty)?, &center, &opts)?,
            _ => fit_penalized_likelihood(&data, link, penalty, &center, &opts)?,
        })
    })??;
    print_json(
        &EstimateOutput {
            beta_hat: fit.beta_hat,
            objective: fit.objective_value,
            converged: fit.converged,
            active_set: fit.active_set,
            iterations: fit.iterations_used,
            restart_index: fit.restart_index,
        },
        None,
    )
}

#[derive(Deserialize)]
struct PerturbConfig {
    data: PathBuf,
    link: Option<LinkFamily>,
    penalty: PenaltySpec,
    beta: Vec<f64>,
}

#[derive(Serialize)]
struct PerturbOutput {
    max_abs_perturbation: Vec<f64>,
}

fn perturb(args: &Common) -> CliResult<()> {
    let cfg: PerturbConfig = load(&args.config)?;
    let (data, link, _) = dataset_link(&resolve(&args.config, &cfg.data), cfg.link)?;
    let out = args.out.as_ref().ok_or_else(|| Failure::Config("perturb needs --out <csv>".into()))?;
    let perturbed = AdversarialObjective::new(&data, link, cfg.penalty)?.perturb(&DVector::from_vec(cfg.beta))?;
    let shifted = Dataset::new(perturbed.x_tilde.clone(), data.y.clone(), data.seed, data.model_provenance.clone())?;
    write_dataset(&shifted, out)?;
    print_json(&PerturbOutput { max_abs_perturbation: perturbed.max_abs_perturbation() }, None)
}

#[derive(Deserialize)]
struct SampleConfig {
    model: ModelSpec,
    n: usize,
    #[serde(default)]
    seed: u64,
}

fn sample(args: &Common) -> CliResult<()> {
    let cfg: SampleConfig = load(&args.config)?;
    let out = args.out.as_ref().ok_or_else(|| Failure::Config("sample needs --out <csv>".into()))?;
    let data = sample_dataset(&cfg.model, cfg.n, args.seed.unwrap_or(cfg.seed))?;
    write_dataset(&data, out)?;
    Ok(())
}

fn default_radius() -> f64 {
    10.0
}

fn default_draws() -> usize {
    1000
}

fn default_moment_samples() -> usize {
    200_000
}

#[derive(Deserialize)]
struct LimitConfig {
    model: ModelSpec,
    penalty: PenaltyFamily,
    lambda0: f64,
    #[serde(default = "default_radius", rename = "radius_K")]
    radius_k: f64,
    #[serde(default = "default_draws")]
    draws: usize,
    #[serde(default = "default_moment_samples")]
    moment_samples: usize,
    #[serde(default)]
    seed: u64,
    /// Sample sizes for the rate check and condition probes.
    #[serde(default)]
    n_grid: Vec<usize>,
    #[serde(default = "default_probe_radius")]
    probe_radius: f64,
    #[serde(default = "default_probe_samples")]
    probe_samples: usize,
}

fn default_probe_radius() -> f64 {
    1.0
}

fn default_probe_samples() -> usize {
    20_000
}

#[derive(Serialize)]
struct LimitOutput {
    #[serde(rename = "M")]
    m: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    v: Vec<f64>,
    mean_abs_eps: f64,
    u_star_samples: Vec<Vec<f64>>,
    diagnostics: LimitDiagnostics,
}

#[derive(Serialize)]
struct LimitDiagnostics {
    moments: MomentSummary,
    penalty_case: PenaltyCase,
    multimodal_draws: usize,
    rate_check: Option<fgsm_glm::asymptotics::RateCheck>,
    sign_probe: Option<fgsm_glm::asymptotics::SignProbe>,
}

fn write_pairs(path: &Path, header: &str, rows: impl Iterator<Item = String>) -> CliResult<()> {
    let mut text = format!("{header}\n");
    for r in rows {
        text.push_str(&r);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Failure::Other(e.to_string()))
}

fn limit(args: &Common) -> CliResult<()> {
    let cfg: LimitConfig = load(&args.config)?;
    let seed = args.seed.unwrap_or(cfg.seed);
    let case = cfg.penalty.case();
    let (output, probe) = with_threads(args.threads, || -> CliResult<_> {
        let raw = compute_moments(&cfg.model, cfg.moment_samples, seed)?;
        let problem = LimitProblem::new(prefer_analytic(raw.clone()), case, cfg.lambda0, cfg.model.beta0.clone(), cfg.radius_k)?;
        let draws = draw_limit(&problem, cfg.draws, seed.wrapping_add(1))?;
        let (rates, probe) = if cfg.n_grid.is_empty() {
            (None, None)
        } else {
            let schedule = LambdaSchedule::for_case(cfg.lambda0, case);
            let rates = check_rates(&cfg.penalty.with_lambda(1.0), |n| schedule.at(n), &cfg.model.beta0, &cfg.n_grid)?;
            let probe = probe_sign_conditions(&cfg.model, cfg.probe_radius, &cfg.n_grid, cfg.probe_samples, seed.wrapping_add(2))?;
            (Some(rates), Some(probe))
        };
        let output = LimitOutput {
            m: problem.moments.m.clone(),
            v: problem.moments.v.clone(),
            mean_abs_eps: problem.moments.mean_abs_eps,
            u_star_samples: draws.iter().map(|d| d.u_star.clone()).collect(),
            diagnostics: LimitDiagnostics {
                moments: raw,
                penalty_case: case,
                multimodal_draws: draws.iter().filter(|d| d.multimodal).count(),
                rate_check: rates,
                sign_probe: probe.clone(),
            },
        };
        Ok((output, probe))
    })??;
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Other(e.to_string()))?;
            print_json(&output, Some(&dir.join("limit.json")))?;
            if let Some(rates) = &output.diagnostics.rate_check {
                let rows = rates.alpha_sequence.iter().zip(&rates.tau_sequence).map(|(a, t)| format!("{},{:.16e},{:.16e}", a.0, a.1, t.1));
                write_pairs(&dir.join("rates.csv"), "n,alpha_n,tau_n", rows)?;
            }
            if let Some(probe) = &probe {
                let rows = probe.rows.iter().map(|r| format!("{},{:.16e},{:.16e}", r.n, r.near_zero_sup, r.sign_sup));
                write_pairs(&dir.join("probes.csv"), "n,near_zero_sup,sign_sup", rows)?;
            }
            let breach = args.check && output.diagnostics.rate_check.as_ref().is_some_and(|r| !r.pass);
            if breach {
                return Err(Failure::Breach("penalty schedule fails the rate check".into()));
            }
            Ok(())
        }
        None => print_json(&output, None),
    }
}

/// Thresholds used by `--check`.
#[derive(Deserialize)]
#[serde(default)]
struct CheckThresholds {
    max_abs_consistency_slope: f64,
    max_ks: f64,
    min_oracle_recovery: f64,
    min_cosine: f64,
}

impl Default for CheckThresholds {
    fn default() -> Self {
        CheckThresholds { max_abs_consistency_slope: 0.15, max_ks: 0.10, min_oracle_recovery: 0.9, min_cosine: 0.7 }
    }
}

#[derive(Deserialize)]
struct CheckSection {
    #[serde(default)]
    check: CheckThresholds,
}

fn experiment_config(args: &Common) -> CliResult<ExperimentConfig> {
    let mut cfg: ExperimentConfig = load(&args.config)?;
    cfg.output_dir = match &args.out {
        Some(out) => out.clone(),
        None => resolve(&args.config, &cfg.output_dir),
    };
    if let Some(seed) = args.seed {
        cfg.master_seed = seed;
    }
    if args.threads.is_some() {
        cfg.threads = args.threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn experiment_breaches(report: &ExperimentReport, t: &CheckThresholds) -> Vec<String> {
    let mut out = Vec::new();
    match report.fgsm.consistency_slope {
        Some(s) if s.abs() <= t.max_abs_consistency_slope => {}
        Some(s) => out.push(format!("consistency slope {s:.4} outside +-{}", t.max_abs_consistency_slope)),
        None => {}
    }
    for k in &report.fgsm.ks_statistics {
        if let Some(d) = k.statistic {
            if !k.low_power && d > t.max_ks {
                out.push(format!("KS statistic {d:.4} on coordinate {} above {}", k.coordinate, t.max_ks));
            }
        }
    }
    out
}

fn experiment(args: &Common) -> CliResult<()> {
    let cfg = experiment_config(args)?;
    let thresholds = load::<CheckSection>(&args.config)?.check;
    let report = run_experiment(&cfg)?;
    emit_report(&report, ReportFormat::Csv, &cfg.output_dir)?;
    emit_report(&report, ReportFormat::PlotData, &cfg.output_dir)?;
    println!("{}", cfg.output_dir.join("report.json").display());
    let breaches = experiment_breaches(&report, &thresholds);
    if args.check && !breaches.is_empty() {
        return Err(Failure::Breach(breaches.join("; ")));
    }
    Ok(())
}

#[derive(Deserialize)]
struct OracleSection {
    lambda0_grid: Vec<f64>,
}

fn oracle(args: &Common) -> CliResult<()> {
    let cfg = experiment_config(args)?;
    let grid = load::<OracleSection>(&args.config)?.lambda0_grid;
    let thresholds = load::<CheckSection>(&args.config)?.check;
    let study = oracle_study(&cfg, &grid)?;
    write_oracle_table(&cfg.output_dir.join("oracle.csv"), &study)?;
    let plot: Vec<String> = study.rows.iter().map(|r| format!("{:.16e},{:.16e}", r.lambda0, r.zero_block_rate)).collect();
    write_pairs(&cfg.output_dir.join("plot_oracle.csv"), "lambda0,zero_block_rate", plot.into_iter())?;
    print_json(&study, Some(&cfg.output_dir.join("oracle.json")))?;
    print_json(&study, None)?;
    if args.check && (!study.monotone || study.best_zero_block_rate < thresholds.min_oracle_recovery) {
        return Err(Failure::Breach("oracle recovery below threshold or not monotone".into()));
    }
    Ok(())
}

#[derive(Deserialize)]
struct SignSection {
    shift_grid: Vec<Vec<f64>>,
}

fn signstudy(args: &Common) -> CliResult<()> {
    let cfg = experiment_config(args)?;
    let shifts = load::<SignSection>(&args.config)?.shift_grid;
    let thresholds = load::<CheckSection>(&args.config)?.check;
    let study = sign_neutrality_study(&cfg.model, &shifts, &cfg)?;
    std::fs::create_dir_all(&cfg.output_dir).map_err(|e| Failure::Other(e.to_string()))?;
    write_sign_table(&cfg.output_dir.join("signstudy.csv"), &study)?;
    print_json(&study, Some(&cfg.output_dir.join("signstudy.json")))?;
    print_json(&study, None)?;
    // only rows with a clearly nonzero V carry a direction to compare
    let misaligned = study
        .rows
        .iter()
        .filter(|r| r.v_norm > 5.0 * r.v_max_se)
        .any(|r| r.cosine.is_none_or(|c| c < thresholds.min_cosine));
    if args.check && misaligned {
        return Err(Failure::Breach("measured bias not aligned with the predicted direction".into()));
    }
    Ok(())
}

fn report(args: &ReportArgs) -> CliResult<()> {
    let common = &args.common;
    let cfg = experiment_config(common)?;
    let records = read_records(&cfg.output_dir.join(RECORDS_FILE))?;
    let draws_path = cfg.output_dir.join(DRAWS_FILE);
    let draws = if draws_path.exists() { read_draws(&draws_path)? } else { Vec::new() };
    let report = compute_report(&cfg.model.beta0, &records, &draws);
    let formats: Vec<ReportFormat> = match args.format.as_str() {
        "all" => vec![ReportFormat::Json, ReportFormat::Csv, ReportFormat::PlotData],
        f => vec![f.parse().map_err(Failure::Config)?],
    };
    for f in formats {
        for path in emit_report(&report, f, &cfg.output_dir)? {
            println!("{}", path.display());
        }
    }
    let thresholds = load::<CheckSection>(&common.config)?.check;
    let breaches = experiment_breaches(&report, &thresholds);
    if common.check && !breaches.is_empty() {
        return Err(Failure::Breach(breaches.join("; ")));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Estimate(a) => estimate(a),
        Command::Perturb(a) => perturb(a),
        Command::Sample(a) => sample(a),
        Command::Limit(a) => limit(a),
        Command::Experiment(a) => experiment(a),
        Command::Oracle(a) => oracle(a),
        Command::Signstudy(a) => signstudy(a),
        Command::Report(a) => report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("config error: {m}");
            ExitCode::from(EXIT_CONFIG)
        }
        Err(Failure::Breach(m)) => {
            eprintln!("threshold breach: {m}");
            ExitCode::from(EXIT_BREACH)
        }
        Err(Failure::Other(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
