use std::path::PathBuf;

use thiserror::Error;

/// Failures surfaced by the command-line tool, each with a fixed exit code.
#[derive(Error, Debug)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("training failed: {message} (diagnostic dump: {})", dump.display())]
    Training { message: String, dump: PathBuf },

    #[error("check failed: {}", failures.join(", "))]
    Check { failures: Vec<String> },

    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Training { .. } => 4,
            CliError::Check { .. } => 5,
            CliError::Internal(_) => 1,
        }
    }
}

impl From<hemnet_core::Error> for CliError {
    fn from(e: hemnet_core::Error) -> Self {
        use hemnet_core::Error as E;
        match e {
            E::Config(m) => CliError::Config(m),
            E::Io(err) => CliError::Io(err.to_string()),
            E::Csv(err) => CliError::Io(err.to_string()),
            E::Format(_) | E::UnsupportedVersion { .. } => CliError::Io(e.to_string()),
            other => CliError::Internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
