use std::path::PathBuf;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {primitive}: {detail}")]
    Dimension {
        primitive: &'static str,
        detail: String,
    },

    #[error("optimizer refused step: {0}")]
    Optimizer(String),

    #[error("non-finite values produced by layer {layer}")]
    Numeric { layer: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("explanation failed: {0}")]
    Explanation(String),

    #[error("gradient check failed: {0}")]
    Check(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(primitive: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            primitive,
            detail: detail.into(),
        }
    }

    /// Short machine-readable tag, used for structured CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse { .. } => "parse",
            Error::Schema(_) => "schema",
            Error::Argument(_) => "argument",
            Error::Config(_) => "config",
            Error::Dimension { .. } => "dimension",
            Error::Optimizer(_) => "optimizer",
            Error::Numeric { .. } => "numeric",
            Error::Training { .. } => "training",
            Error::Explanation(_) => "explanation",
            Error::Check(_) => "check",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
