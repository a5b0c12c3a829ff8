use fgsm_glm::glm::{CovariateDistribution, LinkFamily, ModelSpec};
use fgsm_glm::harness::{
    compute_report, execute, read_draws, read_records, read_report, scaled_error_discrepancy, EstimatorKind, ExperimentConfig,
    PenaltyFamily, DRAWS_FILE, RECORDS_FILE,
};
use fgsm_glm::estimators::EstimatorOptions;

fn config(dir: &std::path::Path, n_grid: Vec<usize>, replications: usize) -> ExperimentConfig {
    ExperimentConfig {
        model: ModelSpec::new(LinkFamily::Logistic, vec![1.0, 0.0], CovariateDistribution::standard_gaussian(2)).unwrap(),
        penalty: PenaltyFamily::Scad { a: 3.7 },
        lambda0: 1.0,
        rate_exponent: None,
        n_grid,
        replications,
        estimator_options: EstimatorOptions { restarts: 2, ..Default::default() },
        limit_draws: 30,
        master_seed: 99,
        output_dir: dir.to_path_buf(),
        moment_samples: 10_000,
        baseline: true,
        threads: None,
        record_timing: false,
    }
}

#[test]
fn single_replication_bookkeeping() {
    let dir = tempfile::tempdir().unwrap();
    let run = execute(&config(dir.path(), vec![100], 1)).unwrap();
    assert_eq!(run.records.len(), 2);
    assert_eq!(run.records.iter().filter(|r| r.estimator == EstimatorKind::Fgsm).count(), 1);
    assert_eq!(run.report.fgsm.per_n.len(), 1);
    assert_eq!(run.report.fgsm.per_n[0].replications, 1);
    assert_eq!(run.report.baseline_comparison.as_ref().unwrap().per_n[0].replications, 1);
}

#[test]
fn records_determine_the_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), vec![60, 240], 6);
    let run = execute(&cfg).unwrap();
    assert!(scaled_error_discrepancy(&run.records, &cfg.model.beta0) <= 1e-12);
    let records = read_records(&dir.path().join(RECORDS_FILE)).unwrap();
    let draws = read_draws(&dir.path().join(DRAWS_FILE)).unwrap();
    assert_eq!(records, run.records);
    assert_eq!(draws, run.draws);
    let persisted = read_report(&dir.path().join("report.json")).unwrap();
    std::fs::remove_file(dir.path().join("report.json")).unwrap();
    assert_eq!(compute_report(&cfg.model.beta0, &records, &draws), persisted);
    assert_eq!(persisted, run.report);
}

#[test]
fn records_do_not_depend_on_thread_count() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut one = config(a.path(), vec![50, 150], 5);
    one.threads = Some(1);
    let mut three = config(b.path(), vec![50, 150], 5);
    three.threads = Some(3);
    execute(&one).unwrap();
    execute(&three).unwrap();
    let ra = std::fs::read(a.path().join(RECORDS_FILE)).unwrap();
    let rb = std::fs::read(b.path().join(RECORDS_FILE)).unwrap();
    assert_eq!(ra, rb);
    assert_eq!(std::fs::read(a.path().join(DRAWS_FILE)).unwrap(), std::fs::read(b.path().join(DRAWS_FILE)).unwrap());
}
