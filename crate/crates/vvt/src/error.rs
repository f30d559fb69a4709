use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = VvtError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum VvtError {
    #[error("config violations:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<VvtError>,
    },
    #[error(transparent)]
    Core(#[from] vvt_core::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("run directory {} is locked by another process", .0.display())]
    Locked(PathBuf),
    #[error("config hash mismatch: {0}")]
    HashMismatch(String),
    #[error("{0}")]
    Invalid(String),
}

impl VvtError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        VvtError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        VvtError::Format { path: path.into(), message: message.to_string() }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            e @ VvtError::Config(_) => e,
            e => VvtError::Stage { stage: stage.to_string(), source: Box::new(e) },
        }
    }

    /// 2 for configuration problems, 3 for everything that fails while a
    /// stage runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            VvtError::Config(_) => 2,
            _ => 3,
        }
    }
}
