use thiserror::Error;

use crate::lm::LmTrace;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid user-facing configuration (layout, mesh size, dataset spec, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// Inconsistent shapes or arguments passed between components.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("mesh error: {0}")]
    Mesh(String),

    /// Non-physical model input, e.g. a nonpositive element conductivity.
    #[error("model error: {0}")]
    Model(String),

    #[error("singular evaluation: {0}")]
    Singular(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("reconstruction aborted: {message}")]
    Reconstruction {
        message: String,
        trace: Box<LmTrace>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Numerical failures as opposed to configuration or I/O problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Mesh(_)
                | Error::Model(_)
                | Error::Singular(_)
                | Error::Solver { .. }
                | Error::Reconstruction { .. }
        )
    }
}
