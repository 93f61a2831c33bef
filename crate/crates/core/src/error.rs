use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("argument {arg} leaves the analytic region ({lo}, {hi})")]
    WindowViolation { arg: f64, lo: f64, hi: f64 },

    #[error("second derivative {value:e} at the product point is too small")]
    DegenerateCurvature { value: f64 },

    #[error("anchors {0} and {1} coincide numerically; resample the shift")]
    CoincidentAnchors(usize, usize),

    #[error("witness not achieved: best grid error {best_error:e} > {requested:e}")]
    WitnessNotAchieved { best_error: f64, requested: f64 },

    #[error("search failure: {reason} (best error {best_error:e})")]
    SearchFailure {
        reason: String,
        best_error: f64,
        /// Architecture and statistics of the best attempt, when a network was assembled.
        report: Option<Box<crate::network::BuildReport>>,
    },

    #[error("decomposition failure: residual {residual:e} exceeds cap {cap:e}")]
    DecompositionFailure { residual: f64, cap: f64 },

    #[error("parse error at {context}: {message}")]
    Parse { context: String, message: String },

    #[error("training diverged at epoch {epoch}: {message}")]
    Diverged { epoch: usize, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(context: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            context: context.into(),
            message: message.into(),
        }
    }

    pub(crate) fn config(message: impl Into<String>) -> Self {
        Error::InvalidConfig(message.into())
    }
}
