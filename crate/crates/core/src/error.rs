use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
///
/// Variants map onto the CLI exit codes: `Format`, `Sequencing`, `Range`,
/// `Alignment`, `Io` and `Corruption` are data errors; `Numeric` and
/// `Training` are numeric errors; `Config` is a usage error.
#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),

    #[error("sequencing error at row {row}: t_ms {t_ms} does not increase")]
    Sequencing { row: usize, t_ms: i64 },

    #[error("range error at row {row}, column {column}: {value} outside [{min}, {max}]")]
    Range {
        row: usize,
        column: String,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numeric error in {tensor}: {detail}")]
    Numeric { tensor: String, detail: String },

    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Training { epoch: usize, loss: f64 },

    #[error("corrupt checkpoint: {0}")]
    Corruption(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Numeric { .. } | Error::Training { .. } => 3,
            _ => 2,
        }
    }
}
