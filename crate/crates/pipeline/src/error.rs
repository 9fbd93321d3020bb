use std::path::PathBuf;
use thiserror::Error;

/// Error categories surfaced by the CLI, each with a stable exit code.
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image: {path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("generation: {0}")]
    Generation(#[from] leafgen_core::Error),
    #[error("generation: {0}")]
    GenerationFailed(String),
    #[error("validation: {0}")]
    Validation(String),
    #[error("service: {0}")]
    Service(String),
    #[error("internal: {0}")]
    Internal(String),
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

impl PipelineError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        PipelineError::Io { path: path.into(), source }
    }

    pub fn category(&self) -> &'static str {
        match self {
            PipelineError::Usage(_) => "usage",
            PipelineError::Config(_) => "config",
            PipelineError::Io { .. } | PipelineError::Image { .. } => "io",
            PipelineError::Generation(_) | PipelineError::GenerationFailed(_) => "generation",
            PipelineError::Validation(_) => "validation",
            PipelineError::Service(_) => "service",
            PipelineError::Internal(_) => "internal",
        }
    }

    /// 0 success, 1 internal, 2 usage, 3 config, 4 io, 5 generation,
    /// 6 validation, 7 service.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Internal(_) => 1,
            PipelineError::Usage(_) => 2,
            PipelineError::Config(_) => 3,
            PipelineError::Io { .. } | PipelineError::Image { .. } => 4,
            PipelineError::Generation(_) | PipelineError::GenerationFailed(_) => 5,
            PipelineError::Validation(_) => 6,
            PipelineError::Service(_) => 7,
        }
    }
}

impl From<serde_json::Error> for PipelineError {
    fn from(e: serde_json::Error) -> Self {
        PipelineError::Internal(format!("json: {e}"))
    }
}
