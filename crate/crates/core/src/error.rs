use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not skew-symmetric (‖M + Mᵀ‖_F = {defect:e})")]
    NotSkew { defect: f64 },

    #[error("simulation diverged at step {step} (t = {time:.4} s): non-finite {field}")]
    Divergence {
        step: usize,
        time: f64,
        field: &'static str,
    },

    #[error("Gram matrix of output channel {channel} is not positive definite even with jitter {jitter:e}")]
    Factorization { channel: usize, jitter: f64 },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("gains are not stabilizing: closed-loop eigenvalue with real part {max_real:e}")]
    NotStabilizing { max_real: f64 },

    #[error("non-finite aggressiveness Jacobian")]
    NonFiniteJacobian,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Self::Json {
            path: path.into(),
            source,
        }
    }
}
