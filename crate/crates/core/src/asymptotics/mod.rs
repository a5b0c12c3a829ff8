//! Population quantities and the limit law of the estimator: moments
//! `M`, `V`, `E|eps|`, the limit objective `D(u)` and its maximizer, the
//! oracle limit, and numerical probes of the regularity conditions.

mod conditions;
mod limit;
mod moments;

pub use conditions::{
    check_rates, loglog_slope, probe_directions, probe_sign_conditions, probe_sign_conditions_with, validate_tail, ProbeRow,
    RateCheck, SignProbe, TailCheck, DEFAULT_PROBE_DIRECTIONS, RATE_SLOPE_THRESHOLD,
};
pub use limit::{
    draw_limit, limit_argmax, limit_objective, oracle_limit, sample_w, AsymptoticDraw, LambdaSchedule, LimitProblem,
    PenaltyCase,
};
pub use moments::{compute_moments, AnalyticMoments, MomentErrors, MomentSummary, MIN_MC_SAMPLES};
