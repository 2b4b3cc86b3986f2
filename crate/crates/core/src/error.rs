use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate divisor: covariance needs at least 2 columns, got {0}")]
    DegenerateDivisor(usize),

    #[error("undefined normalized distance: row {0} has (near) zero norm")]
    DegenerateRow(usize),

    #[error("{method} did not converge after {sweeps} sweeps (residual {residual:e})")]
    NonConvergence {
        method: &'static str,
        sweeps: usize,
        residual: f64,
    },

    #[error("training diverged at step {step}: {detail}")]
    Divergence { step: usize, detail: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
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
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
