use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("structural error: {0}")]
    Structural(String),

    #[error("point outside the ball domain: norm {norm} (limit {limit})")]
    Domain { norm: f64, limit: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("sampling error: {0}")]
    Sampling(String),

    #[error("unknown key: {0}")]
    Lookup(String),

    #[error("format error at line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, edge {edge}: loss {loss}")]
    Diverged { epoch: usize, edge: String, loss: f64 },

    #[error("report error: {0}")]
    Report(String),

    #[error("{0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
