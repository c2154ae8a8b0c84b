use thiserror::Error;

/// Errors produced by the identification library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("factorization of a {dim}x{dim} covariance failed after jitter: {diagnostics}")]
    Factorization { dim: usize, diagnostics: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("objective is not finite at the initial point: {0}")]
    Initialization(String),
    #[error("tempering stopped at beta = {beta} after {stages} stages")]
    StageLimit {
        stages: usize,
        beta: f64,
        betas: Vec<f64>,
        acceptance_rates: Vec<f64>,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. }
                | Error::Numerical(_)
                | Error::Initialization(_)
                | Error::StageLimit { .. }
        )
    }
}
