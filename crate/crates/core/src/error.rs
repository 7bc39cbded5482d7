use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the inference engines, solvers and dataset I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical divergence at edge (sample {sample}, feature {feature}) after {iteration} sweeps")]
    Divergence {
        sample: usize,
        feature: usize,
        iteration: usize,
    },

    /// `1 - beta_tilde * C` fell below the singularity tolerance. The Gaussian
    /// closure of the Hopfield posterior no longer exists at this temperature.
    #[error("singular denominator: 1 - beta_tilde*C = {margin:e} at {location}")]
    Singular { margin: f64, location: String },

    #[error("M-step argument |eps/(alpha sqrt N)| = {value} is outside the atanh domain")]
    AtanhDomain { value: f64 },

    #[error("replica order parameters inconsistent: r - q^2 = {gap:e}")]
    Inconsistent { gap: f64 },

    #[error("exact enumeration refused: N = {n} exceeds the bound {max}")]
    TooLarge { n: usize, max: usize },

    #[error("{path}: row {row}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        column: usize,
        message: String,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
