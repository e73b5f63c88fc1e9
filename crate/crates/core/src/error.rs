//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("spin must be integer or half-integer with 2S+1 >= 2, got {0}")]
    InvalidSpin(String),

    #[error("unsupported Stevens index ({k},{q}); supported pairs: (2,0), (4,0), (4,4), (6,0), (6,4)")]
    UnsupportedStevens { k: u32, q: u32 },

    #[error("matrix is not Hermitian: max |A - A^H| = {deviation:.3e} exceeds {tol:.3e}")]
    NotHermitian { deviation: f64, tol: f64 },

    #[error("eigensolver did not converge after {sweeps} Jacobi sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("invalid field grid: {0}")]
    InvalidGrid(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("unfittable data: {0}")]
    Unfittable(String),

    #[error("degenerate crossing fit: {0}")]
    DegenerateCrossing(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Csv {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{path}: {msg}")]
    Json { path: PathBuf, msg: String },

    #[error("duplicate field value {b_tesla} T in sweep manifest")]
    DuplicateField { b_tesla: f64 },
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
