use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Structural problem with an input file (missing column, bad JSON, ...).
    #[error("format error: {0}")]
    Format(String),

    /// A field parsed but carries a value outside its domain.
    #[error("value error at row {row}: {message}")]
    Value { row: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    /// The sample has no maskable position for a positive mask ratio.
    #[error("generation impossible for sample {0}: no maskable positions")]
    GenerationImpossible(String),

    #[error("fill model returned no usable candidate for position {position}")]
    Fill { position: usize },

    #[error("fill service transport error: {0}")]
    Transport(String),

    #[error("fill service protocol error: {0}")]
    Protocol(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by the data being processed rather than by
    /// configuration or environment.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. } | Error::Format(_) | Error::Value { .. } | Error::Json(_)
        )
    }
}
