use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible shapes: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("invalid penalty: {0}")]
    InvalidPenalty(String),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("objective is not finite at beta = {beta:?}")]
    NonFiniteObjective { beta: Vec<f64> },

    #[error("design matrix is rank deficient (rank {rank} < {p})")]
    RankDeficient { rank: usize, p: usize },

    #[error("{what} did not converge within {iterations} iterations")]
    NoConvergence { what: &'static str, iterations: usize },

    #[error("matrix is singular: {0}")]
    Singular(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("experiment failed: {0}")]
    Experiment(String),

    #[error("malformed file {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }
}
