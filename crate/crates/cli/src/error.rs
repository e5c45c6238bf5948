use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error in {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("cannot access {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("missing input: {0}")]
    Missing(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("{context}: {source}")]
    Pipeline { context: String, source: nephroseg_core::Error },
}

impl CliError {
    /// Short category name printed before the message.
    pub fn category(&self) -> &'static str {
        match self {
            Self::Config { .. } => "config",
            Self::Io { .. } => "io",
            Self::Missing(_) => "input",
            Self::Geometry(_) => "geometry",
            Self::Pipeline { .. } => "pipeline",
        }
    }

    /// Process exit code per category.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } => 2,
            Self::Io { .. } | Self::Missing(_) => 3,
            Self::Geometry(_) => 4,
            Self::Pipeline { .. } => 5,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

impl From<nephroseg_core::Error> for CliError {
    fn from(source: nephroseg_core::Error) -> Self {
        Self::Pipeline { context: "pipeline".into(), source }
    }
}

/// Attach context (usually a file or study) to core errors.
pub trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T>;
}

impl<T> Context<T> for nephroseg_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| CliError::Pipeline { context: what(), source })
    }
}
