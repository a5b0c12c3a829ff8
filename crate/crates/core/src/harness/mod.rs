//! Experiment orchestration: replicated fits over a grid of sample sizes,
//! comparison with draws from the limit law, persistence of records, and
//! reports computed from those records alone.

mod config;
mod experiment;
mod ks;
mod records;
mod report;
mod studies;

pub use config::{ExperimentConfig, PenaltyFamily, DEFAULT_MOMENT_SAMPLES};
pub use experiment::{
    execute, limit_moments, prefer_analytic, run_experiment, scaled_error_discrepancy, simulate, with_threads, ExperimentRun,
    DRAWS_FILE, MAX_NONCONVERGED_SHARE, RECORDS_FILE,
};
pub use ks::{ks_p_value, ks_statistic};
pub use records::{read_draws, read_records, write_draws, write_records, EstimatorKind, ReplicationRecord};
pub use report::{
    compute_report, emit_report, quantile, read_report, EstimatorReport, ExperimentReport, KsComparison, ReportFormat,
    SampleSizeSummary, KS_MIN_SAMPLE,
};
pub use studies::{oracle_study, sign_neutrality_study, write_oracle_table, write_sign_table, OracleRow, OracleStudy, SignRow, SignStudy};
