use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch (expected {expected}, found {found})")]
    DimensionMismatch {
        op: &'static str,
        expected: String,
        found: String,
    },

    #[error("{what}: rank deficient, requested rank {requested} but only {achievable} is achievable")]
    RankDeficient {
        what: &'static str,
        requested: usize,
        achievable: usize,
    },

    #[error("reorthonormalization: column {index} is numerically dependent on the preceding columns")]
    DefectiveColumn { index: usize },

    #[error("sym_eig: input is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },

    #[error("{what}: singular linear system")]
    SingularSystem { what: &'static str },

    #[error("singular Sigma at rank {rank}: sigma_min/sigma_max = {ratio:e}")]
    SingularSigma { rank: usize, ratio: f64 },

    #[error("solution blew up at t = {t}: non-finite or |value| > 1e12 in column {column}")]
    BlowUp { t: f64, column: usize },

    #[error("non-positive density at grid index {index}")]
    NonPositiveDensity { index: usize },

    #[error("row evaluation: state value for row {row} was not supplied")]
    MissingAdjacency { row: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn dims(op: &'static str, expected: impl Into<String>, found: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            op,
            expected: expected.into(),
            found: found.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
