use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("missing upstream artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] ivpp::Error),
}

impl CliError {
    pub fn io(path: impl AsRef<Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().to_path_buf(),
            source,
        }
    }

    pub fn missing(path: impl AsRef<Path>, hint: impl Into<String>) -> Self {
        CliError::MissingArtifact {
            path: path.as_ref().to_path_buf(),
            hint: hint.into(),
        }
    }

    /// Diagnostic category printed with the error.
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::MissingArtifact { .. } => "missing-artifact",
            CliError::Io { .. } => "io",
            CliError::Core(e) => e.category(),
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "usage" => 3,
            "missing-artifact" => 4,
            "io" => 5,
            "input" => 6,
            "training" => 7,
            "checkpoint" => 8,
            _ => 1,
        }
    }
}
