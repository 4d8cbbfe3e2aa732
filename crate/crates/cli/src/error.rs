use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Core(#[from] cdsmooth::Error),

    #[error("{failed} of {total} verification checks failed")]
    Verification { failed: usize, total: usize },
}

impl CliError {
    /// 2: configuration or input, 3: numerical failure, 4: verification failure.
    pub fn exit_code(&self) -> u8 {
        use cdsmooth::Error as E;
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Parse { .. } => 2,
            Self::Core(E::Config(_) | E::Dimension(_) | E::Schedule(_) | E::InvalidArgument(_)) => 2,
            Self::Core(_) => 3,
            Self::Verification { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Self::Parse {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
