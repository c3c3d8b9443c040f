use std::io;
use std::path::{Path, PathBuf};

use mti_core::analysis::IngestError;
use mti_core::guidance::GuidanceError;
use mti_core::{DecodeError, ModelError};
use thiserror::Error;

/// Failure categories. Each maps to its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("I/O error: {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
    #[error("model error: {0}")]
    Model(ModelError),
    #[error("overflow: {0}")]
    Overflow(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Model(_) => 4,
            CliError::Overflow(_) => 5,
            CliError::Schema(_) => 6,
            CliError::Invariant(_) => 7,
        }
    }

    pub fn io(path: &Path, source: io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::ContextOverflow { .. } => CliError::Overflow(e.to_string()),
            ModelError::Io(source) => CliError::Io {
                path: PathBuf::from("<weights>"),
                source,
            },
            other => CliError::Model(other),
        }
    }
}

impl From<DecodeError> for CliError {
    fn from(e: DecodeError) -> Self {
        match e {
            DecodeError::PromptOverflow { .. } => CliError::Overflow(e.to_string()),
            DecodeError::EmptyPrompt | DecodeError::InvalidConfig(_) => CliError::Config(e.to_string()),
            DecodeError::Model(m) | DecodeError::Guidance(GuidanceError::Model(m)) => m.into(),
            DecodeError::Guidance(GuidanceError::BranchOverflow { .. }) => CliError::Overflow(e.to_string()),
            DecodeError::Guidance(g) => CliError::Config(g.to_string()),
        }
    }
}

pub(crate) fn ingest_error(path: &Path, e: IngestError) -> CliError {
    match e {
        IngestError::Schema { line, message } => CliError::Schema(format!("{}: line {line}: {message}", path.display())),
        IngestError::Io(source) => CliError::io(path, source),
    }
}
