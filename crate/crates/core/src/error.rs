//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("series is not mean-reverting (AR(1) coefficient {coeff})")]
    NonMeanReverting { coeff: f64 },

    #[error("conflicting views: asset column {column} appears in more than one pair")]
    ConflictingView { column: usize },

    #[error("covariance matrix is singular; regularization required")]
    SingularCovariance,

    #[error("covariance matrix is not positive definite; regularize before solving")]
    NotPositiveDefinite,

    #[error("infeasible problem: {0}")]
    Infeasible(String),

    #[error("solver failure: {0}")]
    SolverFailure(String),

    #[error("bankruptcy on {date}: wealth fell to {wealth}")]
    Bankruptcy {
        date: chrono::NaiveDate,
        wealth: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
