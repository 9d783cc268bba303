use thiserror::Error;

/// Errors produced by the calibration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A JSONL line could not be parsed into a record.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A record or argument violated a schema invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// Vector or matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A pipeline stage found a required field missing on a record.
    #[error("missing field \"{field}\" on record {record_id}: {context}")]
    MissingField {
        field: &'static str,
        record_id: String,
        context: String,
    },

    /// Endpoint could not be reached or answered with an error after retries.
    #[error("transport error: {0}")]
    Transport(String),

    /// Replay mode was asked for a request that is not in the fixture file.
    #[error("fixture miss for request hash {hash}")]
    FixtureMiss { hash: String },

    /// A metric was evaluated on a series that does not support it.
    #[error("metric error: {0}")]
    Metric(String),

    /// Training failed to produce a usable model.
    #[error("training error: {0}")]
    Training(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
