use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("region is empty (infeasible constraints)")]
    Infeasible,

    #[error("linear program is unbounded")]
    Unbounded,

    #[error("simplex iteration cap reached")]
    IterationLimit,

    #[error("half-space normal vector is zero")]
    ZeroNormal,

    #[error("empty dataset: {0}")]
    EmptyDataset(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("record is verified (margin {0}); no abstract counterexample exists")]
    NoCounterexample(f64),

    #[error("no adversarial examples found")]
    NoAdversarialExamples,

    #[error("shrink center is not adversarial")]
    CenterNotAdversarial,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("region file: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
