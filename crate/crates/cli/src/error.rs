//! Command failures and their process exit codes.

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid arguments: {0}")]
    Invalid(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("bundle error: {0}")]
    Bundle(String),
    #[error("{0}")]
    Length(String),
    #[error("ingest failed: {0}")]
    Ingest(String),
    #[error("inference failed: {0}")]
    Infer(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Invalid(_) => 2,
            Self::Io { .. } | Self::Bundle(_) => 3,
            Self::Length(_) => 4,
            Self::Ingest(_) => 5,
            Self::Infer(_) => 6,
        }
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            context: path.display().to_string(),
            source,
        }
    }
}

impl From<mndag_core::Error> for CliError {
    /// Core errors raised while validating user input.
    fn from(e: mndag_core::Error) -> Self {
        Self::Invalid(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
