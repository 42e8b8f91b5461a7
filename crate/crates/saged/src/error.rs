//! Error types shared across the pipeline stages.

use std::path::PathBuf;

use thiserror::Error;

/// Top-level error for every stage of the engine.
#[derive(Debug, Error)]
pub enum SagedError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("failed to parse {path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("schema violation in row {row}, field {field}: {message}")]
    Schema {
        row: usize,
        field: String,
        message: String,
    },

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error("missing prerequisite: run the `{stage}` stage first ({detail})")]
    MissingPrerequisite { stage: String, detail: String },

    #[error("endpoint failure: {0}")]
    Endpoint(String),

    #[error("endpoint failure budget exceeded: {0}")]
    FailureBudget(String),

    #[error("generation run interrupted; checkpoint persisted at {0}")]
    Interrupted(PathBuf),

    #[error("{0}")]
    Invalid(String),
}

impl SagedError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SagedError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        SagedError::Parse {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the CLI, per the command contract.
    pub fn exit_code(&self) -> i32 {
        match self {
            SagedError::Config(_) => 2,
            SagedError::MissingPrerequisite { .. } => 3,
            SagedError::FailureBudget(_) | SagedError::Endpoint(_) => 4,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SagedError>;
