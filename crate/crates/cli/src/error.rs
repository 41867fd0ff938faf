use std::fmt::Display;

use sqgen_core::decoding::DecodeError;
use sqgen_core::qaeval::QaError;
use sqgen_core::training::TrainError;
use sqgen_core::ModelError;
use thiserror::Error;

/// Failures mapped onto the process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn input(msg: impl Into<String>) -> Self {
        Self::Input(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Numerical(_) => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub trait Context<T> {
    /// Treats the error as bad input, prefixed with `what`.
    fn context(self, what: impl Display) -> Result<T>;
}

impl<T, E: Display> Context<T> for std::result::Result<T, E> {
    fn context(self, what: impl Display) -> Result<T> {
        self.map_err(|e| CliError::Input(format!("{what}: {e}")))
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::Numerics(_) => Self::Numerical(e.to_string()),
            other => Self::Input(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::TrainingDiverged { .. } => Self::Numerical(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => Self::Input(other.to_string()),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::Model(m) => m.into(),
            other => Self::Input(other.to_string()),
        }
    }
}

impl From<QaError> for CliError {
    fn from(e: QaError) -> Self {
        match e {
            QaError::Model(m) => m.into(),
            other => Self::Input(other.to_string()),
        }
    }
}
