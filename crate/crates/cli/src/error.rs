use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] aggnn_core::Error),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },

    #[error("missing artifacts: {0}")]
    MissingArtifacts(String),

    #[error("malformed artifact {path}: {message}")]
    Artifact { path: PathBuf, message: String },

    #[error("permutation test failed: {0}")]
    PermutationFailure(String),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.category(),
            CliError::Config(_) => "invalid-config",
            CliError::Io { .. } => "io",
            CliError::MissingArtifacts(_) => "missing-artifacts",
            CliError::Artifact { .. } => "malformed-artifact",
            CliError::PermutationFailure(_) => "permutation-failure",
        }
    }

    /// Process exit status for this error; 0 is success and 2 is left to
    /// the argument parser for usage errors.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "invalid-argument" => 3,
            "invalid-config" => 4,
            "io" => 5,
            "missing-artifacts" => 6,
            "model-format" | "malformed-artifact" => 7,
            "divergence" => 8,
            "degenerate-geometry" => 9,
            "invalid-state" => 10,
            "permutation-failure" => 11,
            _ => 70,
        }
    }

    /// One-line JSON report for stderr.
    pub fn to_json(&self) -> String {
        serde_json::json!({ "error": self.category(), "message": self.to_string() }).to_string()
    }

    pub(crate) fn artifact(path: &Path, message: impl ToString) -> Self {
        CliError::Artifact {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }
}

pub(crate) trait IoContext<T> {
    fn at(self, path: &Path) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: &Path) -> Result<T> {
        self.map_err(|source| CliError::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}
