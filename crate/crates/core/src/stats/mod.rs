//! Numerical procedures: correlations and top-K overlap, the stratified
//! coverage estimator, and logistic growth fitting.

mod correlation;
mod coverage;
mod logistic;

use thiserror::Error;

pub use correlation::{average_ranks, pearson, spearman, topk_overlap, Overlap, RankedEntry};
pub use coverage::{
    coverage_interval, estimate_coverage, stratified_sample, stratum_index, summarize_strata, CoverageReport, SeMethod,
    StratumPlan, StratumSummary, STRATA, Z95,
};
pub use logistic::{fit_logistic, fit_many, logistic, logistic_jacobian, LogisticFit};

#[derive(Clone, Debug, PartialEq, Error)]
pub enum StatsError {
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("correlation undefined: zero variance")]
    ZeroVariance,
    #[error("no stratum has both population and sample")]
    NoStrata,
    #[error("no fit: {0}")]
    NoFit(String),
}
