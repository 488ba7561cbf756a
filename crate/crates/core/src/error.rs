use std::fmt;
use std::path::PathBuf;

use crate::embedding::EmbeddingError;
use crate::evaluation::EvalError;
use crate::gateway::{CacheError, GatewayError};
use crate::index::IndexError;
use crate::prompting::PromptError;

/// Process exit status for a failed command.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Success = 0,
    Input = 2,
    Backend = 3,
    Integrity = 4,
}

impl ExitCode {
    pub fn code(self) -> i32 {
        self as i32
    }
}

impl fmt::Display for ExitCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.code())
    }
}

/// One query that could not be answered.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QueryFailure {
    pub query_id: String,
    pub message: String,
    pub exit_code: ExitCode,
}

#[derive(Debug, thiserror::Error)]
pub enum CirError {
    #[error("prompting: {0}")]
    Prompt(#[from] PromptError),
    #[error("gateway: {0}")]
    Gateway(#[from] GatewayError),
    #[error("embedding: {0}")]
    Embedding(#[from] EmbeddingError),
    #[error("index: {0}")]
    Index(#[from] IndexError),
    #[error("evaluation: {0}")]
    Eval(#[from] EvalError),
    #[error("config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("integrity: {0}")]
    Integrity(String),
    #[error("{} quer{} failed: {}", .0.len(), if .0.len() == 1 { "y" } else { "ies" }, format_failures(.0))]
    QueryFailures(Vec<QueryFailure>),
}

fn format_failures(failures: &[QueryFailure]) -> String {
    failures
        .iter()
        .map(|f| format!("{} ({})", f.query_id, f.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl CirError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CirError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        match self {
            CirError::Prompt(_) | CirError::Eval(_) | CirError::Config(_) | CirError::Io { .. } => {
                ExitCode::Input
            }
            CirError::Gateway(e) => gateway_code(e),
            CirError::Embedding(e) => embedding_code(e),
            CirError::Index(IndexError::Build { .. }) => ExitCode::Integrity,
            CirError::Index(_) => ExitCode::Input,
            CirError::Integrity(_) => ExitCode::Integrity,
            CirError::QueryFailures(f) => f
                .iter()
                .map(|f| f.exit_code)
                .max_by_key(|c| c.code())
                .unwrap_or(ExitCode::Backend),
        }
    }
}

fn gateway_code(e: &GatewayError) -> ExitCode {
    match e.root() {
        GatewayError::Config(_) | GatewayError::Input(_) => ExitCode::Input,
        GatewayError::Backend { .. } | GatewayError::Parse { .. } | GatewayError::Schema { .. } => {
            ExitCode::Backend
        }
        GatewayError::Cache(CacheError::Io(_)) => ExitCode::Input,
        GatewayError::Cache(_) => ExitCode::Integrity,
        GatewayError::Stage { .. } => ExitCode::Backend,
    }
}

fn embedding_code(e: &EmbeddingError) -> ExitCode {
    match e {
        EmbeddingError::Provider { .. } | EmbeddingError::DimMismatch { .. } => ExitCode::Backend,
        EmbeddingError::Corrupt(_) => ExitCode::Integrity,
        EmbeddingError::Input(_) | EmbeddingError::Degenerate(_) | EmbeddingError::Io { .. } => {
            ExitCode::Input
        }
    }
}
