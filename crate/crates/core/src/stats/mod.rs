//! Statistical layer: random-intercept linear mixed models, Pearson
//! correlation, Z-score standardization and the distribution functions they need.

mod correlation;
mod distributions;
mod lmm;
mod models;
mod standardize;

use thiserror::Error;

pub use correlation::{pearson, Correlation};
pub use distributions::{normal_cdf, student_t_cdf, WALD_Z_95};
pub use lmm::{
    fit_lmm, fit_lmm_at_theta, profiled_deviance, Convergence, LmmDataset, LmmFit, LmmRow,
    Method, OptimizerSettings, Coefficient, INTERCEPT,
};
pub use models::{build_dataset, Model, TrialColumn};
pub use standardize::{
    read_time_trials, standardize_times, write_time_trials, RaceTimes, Standardized,
    TimeTrialRecord,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("design matrix is rank deficient")]
    RankDeficient,
    #[error("need at least {needed} observations, have {have}")]
    TooFewObservations { needed: usize, have: usize },
    #[error("need at least 2 subjects, have {0}")]
    TooFewSubjects(usize),
    #[error("row {row}: expected {expected} covariates, got {got}")]
    CovariateLength { row: usize, expected: usize, got: usize },
    #[error("row {0} contains a non-finite value")]
    NonFinite(usize),
    #[error("variance-ratio optimizer did not converge: {0}")]
    NonConvergence(String),
    #[error("input vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("{0} is constant")]
    ConstantInput(&'static str),
    #[error("need at least {needed} values, have {have}")]
    TooFewValues { needed: usize, have: usize },
    #[error("race {0} has zero spread in finish times")]
    ZeroSpread(String),
    #[error("invalid degrees of freedom {0}")]
    InvalidDf(f64),
    #[error("no metrics rows join the time-trial table")]
    EmptyJoin,
    #[error("time-trial table: {0}")]
    Table(String),
}
