use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("training diverged at iteration {iteration}: parameter norm {norm:.3e} exceeds bound {bound:.3e}")]
    Divergence { iteration: usize, norm: f64, bound: f64 },

    #[error("malformed model file: {0}")]
    ModelFormat(String),
}

impl Error {
    /// Short machine-readable category, used by the CLI for exit reporting.
    pub fn category(&self) -> &'static str {
        match self {
            Error::InvalidArgument(_) => "invalid-argument",
            Error::InvalidState(_) => "invalid-state",
            Error::DegenerateGeometry(_) => "degenerate-geometry",
            Error::Divergence { .. } => "divergence",
            Error::ModelFormat(_) => "model-format",
        }
    }
}

pub(crate) fn invalid_arg(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
