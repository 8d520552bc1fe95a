use nlra_core::NlraError;
use thiserror::Error;

/// Failures surfaced by the command-line tool, each tied to an exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Budget(String),
    #[error("{0}")]
    Divergence(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) | CliError::Io { .. } => 2,
            CliError::Budget(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Internal(_) => 1,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<NlraError> for CliError {
    fn from(e: NlraError) -> Self {
        match e {
            NlraError::CombinatorialBudget { .. } => CliError::Budget(e.to_string()),
            NlraError::Divergence { .. } => CliError::Divergence(e.to_string()),
            NlraError::NoConvergence { .. } => CliError::Internal(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
