use std::fmt::Display;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

/// Command failures, one variant per exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training failed: {0}")]
    Training(String),
    #[error("evaluation failed: {0}")]
    Evaluation(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Training(_) => 4,
            CliError::Evaluation(_) => 5,
        }
    }

    pub fn config(e: impl Display) -> Self {
        CliError::Config(e.to_string())
    }

    pub fn data(e: impl Display) -> Self {
        CliError::Data(e.to_string())
    }

    pub fn training(e: impl Display) -> Self {
        CliError::Training(e.to_string())
    }

    pub fn evaluation(e: impl Display) -> Self {
        CliError::Evaluation(e.to_string())
    }
}
