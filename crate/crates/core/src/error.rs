//! Error type shared across the engine.

use thiserror::Error;

/// Errors produced by calibration, pricing, simulation and IO.
#[derive(Debug, Error)]
pub enum EngineError {
    /// An argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A structurally invalid input (bad field value, wrong ordering, ...).
    #[error("invalid {field}: {reason}")]
    InvalidInput { field: String, reason: String },

    /// A calibration that failed to converge or has no feasible solution.
    #[error("calibration failure: {0}")]
    Calibration(String),

    /// Configuration problems, reported exhaustively.
    #[error("configuration error:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    /// A parse failure with file/line diagnostics.
    #[error("parse error at {file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    /// Simulation setup or execution failure.
    #[error("simulation error: {0}")]
    Simulation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EngineError {
    pub fn domain(msg: impl Into<String>) -> Self {
        EngineError::Domain(msg.into())
    }

    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        EngineError::InvalidInput {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn calibration(msg: impl Into<String>) -> Self {
        EngineError::Calibration(msg.into())
    }

    pub fn simulation(msg: impl Into<String>) -> Self {
        EngineError::Simulation(msg.into())
    }

    /// Process exit code used by the CLI for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            EngineError::Domain(_)
            | EngineError::InvalidInput { .. }
            | EngineError::Config(_)
            | EngineError::Parse { .. }
            | EngineError::Io(_) => 2,
            EngineError::Calibration(_) => 3,
            EngineError::Simulation(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, EngineError>;
