use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("episode already finished ({0})")]
    EpisodeFinished(&'static str),

    #[error("non-finite {what} during update: {detail}")]
    NonFinite { what: &'static str, detail: String },

    #[error(transparent)]
    Transport(#[from] TransportError),

    #[error("checkpoint checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("trajectory read failed at line {line} (last valid line {last_valid:?}): {reason}")]
    TrajectoryRead {
        line: usize,
        last_valid: Option<usize>,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Failures talking to a remote oracle.
#[derive(Debug, Error)]
pub enum TransportError {
    #[error("unsupported endpoint `{0}` (expected tcp://host:port or exec:<command>)")]
    BadEndpoint(String),
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("timed out after {0} ms waiting for a response")]
    Timeout(u64),
    #[error("connection closed by server")]
    Closed,
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("server reported error `{0}`")]
    Server(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
