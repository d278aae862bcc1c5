use std::path::PathBuf;

use thiserror::Error;

use crate::matrix::MatrixError;
use crate::metrics::MetricsError;
use crate::rewards::RewardError;
use crate::types::TypesError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Types(#[from] TypesError),
    #[error(transparent)]
    Reward(#[from] RewardError),
    #[error(transparent)]
    Matrix(#[from] MatrixError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("iterate became non-finite at step {step}")]
    NonFiniteValue { step: usize },
    #[error("trainer did not converge: objective gap {gap:e} exceeds tolerance")]
    NonConvergence { gap: f64 },
    #[error("regularized normal equations are singular")]
    SingularSystem,
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("unsupported preference grid: n = {n}, step = {step}")]
    UnsupportedGrid { n: usize, step: f64 },
    #[error("training failed for {method}: {source}")]
    TrainingFailure {
        method: String,
        #[source]
        source: Box<Error>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),
}

/// Coarse error class, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::InvalidConfig(_)
            | Error::Json(_)
            | Error::Csv(_)
            | Error::UnsupportedGrid { .. } => ErrorClass::Config,
            Error::Types(_) => ErrorClass::Config,
            Error::Matrix(
                MatrixError::BetaOutOfRange(_)
                | MatrixError::BadDimension(_)
                | MatrixError::UnknownId(_)
                | MatrixError::NotSquare { .. },
            ) => ErrorClass::Config,
            Error::Io { .. } => ErrorClass::Io,
            Error::TrainingFailure { source, .. } => source.class(),
            _ => ErrorClass::Numerical,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
