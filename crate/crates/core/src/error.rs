//! Error type shared across the library.

use thiserror::Error;

/// Errors produced by model construction, numeric routines, and file formats.
#[derive(Error, Debug)]
pub enum CoreError {
    /// Architecture description violates a structural invariant.
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    /// Array arguments do not match the shapes implied by the architecture.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A configuration value is outside its admissible range.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// Classification target rows must be distributions (sum to one).
    #[error("invalid labels: {0}")]
    InvalidLabels(String),

    /// A computation produced a non-finite value; reported, never clipped.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// An iterative routine left the finite range at the given step.
    #[error("diverged at step {step}: {context}")]
    Diverged { step: usize, context: String },

    /// A shard or collection that must be non-empty is empty.
    #[error("empty input: {0}")]
    Empty(String),

    /// A per-client failure inside a federated run, tagged with the client.
    #[error("client {client_id}: {source}")]
    Client {
        client_id: usize,
        #[source]
        source: Box<CoreError>,
    },

    /// An on-disk artifact does not follow its declared format.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
