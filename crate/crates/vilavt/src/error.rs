use std::fmt::Display;
use std::path::{Path, PathBuf};

/// Failures of the command-line front end, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error(transparent)]
    Encoder(#[from] vilavt_core::encoder::EncoderError),
    #[error(transparent)]
    Episode(#[from] vilavt_core::orchestrator::EpisodeError),
    #[error(transparent)]
    Training(#[from] vilavt_core::training::TrainingError),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn format(path: &Path, message: impl Display) -> Self {
        Self::Format {
            path: path.to_path_buf(),
            message: message.to_string(),
        }
    }

    /// 1 runtime failure, 2 configuration or usage, 3 input/output.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Config(_) | Error::Usage(_) => 2,
            Error::Encoder(_) | Error::Episode(_) | Error::Training(_) => 1,
        }
    }
}
