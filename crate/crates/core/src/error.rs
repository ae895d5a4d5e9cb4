use std::path::PathBuf;

use crate::covariance::ExpCovParams;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("structural error: {0}")]
    Structure(String),

    #[error("window centered at ({x}, {y}) with half-width {half_width} exceeds image bounds {width}x{height}")]
    OutOfBounds {
        x: i64,
        y: i64,
        half_width: usize,
        width: usize,
        height: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite (failing pivot {pivot})")]
    NotPositiveDefinite { pivot: usize },

    #[error("degenerate window: {0}")]
    DegenerateWindow(String),

    #[error("variogram fit did not converge after {iterations} iterations")]
    VariogramFit {
        iterations: usize,
        best: ExpCovParams,
    },

    #[error("peak fit failed: {0}")]
    PeakFit(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stale covariance factor: {0}")]
    StaleFactor(String),

    #[error("non-finite log-likelihood in {stage}; state dump: {state}")]
    NonFinite { stage: String, state: String },

    #[error("too few samples for an HPD interval: got {got}, need at least {need}")]
    TooFewSamples { got: usize, need: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
