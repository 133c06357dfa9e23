use std::fmt::Display;

use cfe_core::codec::CodecError;
use thiserror::Error;

/// Failures mapped onto the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad arguments or config: exit 1.
    #[error("{0}")]
    Usage(String),
    /// Unreadable, malformed or mismatched data: exit 2.
    #[error("{0}")]
    Data(String),
    /// A required external program is missing: exit 3.
    #[error("{0}")]
    MissingDependency(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::MissingDependency(_) => 3,
        }
    }

    pub fn usage(e: impl Display) -> CliError {
        CliError::Usage(e.to_string())
    }

    pub fn data(e: impl Display) -> CliError {
        CliError::Data(e.to_string())
    }

    pub fn codec(e: CodecError) -> CliError {
        match e {
            CodecError::ExternalUnavailable(_) => CliError::MissingDependency(e.to_string()),
            CodecError::Quality(_) => CliError::Usage(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}
