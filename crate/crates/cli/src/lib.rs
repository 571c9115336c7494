//! Command-line simulator, log replay and the HTTP trial-conduct service.

pub mod replay;
pub mod service;
pub mod simulate;
pub mod store;
pub mod view;

use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags, config or scenario. Exit code 2.
    #[error("{0}")]
    Config(String),
    /// Malformed or inconsistent event log. Exit code 3.
    #[error("{0}")]
    Log(String),
    #[error("{0}")]
    Failed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Log(_) => 3,
            CliError::Failed(_) | CliError::Io(_) => 1,
        }
    }
}

/// Reads a user-supplied file, reporting failures against `field`.
pub(crate) fn read_input(path: &Path, field: &str) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{field}: cannot read {}: {e}", path.display())))
}
