use std::path::PathBuf;

/// Crate-wide error type. Variants map onto the harness exit codes:
/// [`Error::Io`] exits 2, everything else exits 1.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Tensor/operation shape disagreement (wrong rank layout, channel
    /// mismatch, non-broadcastable operands, ...).
    #[error("shape error: {0}")]
    Shape(String),

    /// A value-level precondition failed (odd wavelet size, even kernel,
    /// backward on a non-scalar, ...).
    #[error("argument error: {0}")]
    Argument(String),

    /// Bad run configuration: unknown key, unparsable value, inconsistent
    /// thresholds. Always names the offending key.
    #[error("config error: {0}")]
    Config(String),

    /// The object is not in a state that permits the call (optimizer step
    /// before backward, checkpoint fingerprint mismatch, ...).
    #[error("state error: {0}")]
    State(String),

    /// An operation produced NaN/Inf. `node` identifies the graph node so
    /// training aborts can name the first non-finite tensor.
    #[error("non-finite values produced by {op} (graph node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("i/o error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Image decode/encode failure (carries the path for diagnostics).
    #[error("image error at {path}: {message}")]
    Image { path: PathBuf, message: String },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Harness exit code for this error: 2 for I/O, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. } | Error::Image { .. } => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
