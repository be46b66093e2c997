use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("{0}")]
    Usage(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] butterflow::Error),

    #[error("permutation decomposition failed verification: {0}")]
    PermVerification(String),

    #[error("verification failed: {0}")]
    VerifyFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::CorruptCheckpoint(_) | CliError::Usage(_) => 2,
            CliError::Core(butterflow::Error::TrainingAborted(_)) => 3,
            CliError::Core(butterflow::Error::ShapeMismatch(_) | butterflow::Error::InvalidArgument(_)) => 2,
            CliError::PermVerification(_) => 4,
            CliError::Io { .. } | CliError::Core(_) | CliError::VerifyFailed(_) => 1,
        }
    }

    pub fn config(field: &str, message: impl Into<String>) -> Self {
        CliError::Config {
            field: field.to_string(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
