//! Error taxonomy shared by every module in the crate.
//!
//! Variants map one-to-one onto the CLI's exit-code categories, so library
//! code should pick the variant that best describes the *cause*, not the
//! call site.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NeflError {
    /// Tensor shapes do not line up for the requested operation.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An operation needs more batch elements than it was given
    /// (e.g. batch normalization in training mode with B < 2).
    #[error("degenerate batch: {0}")]
    DegenerateBatch(String),

    /// An index (label, class, block, submodel, client) is out of range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A caller broke an API contract (mismatched upload set, unknown
    /// parameter name, inconsistent spec family, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// An experiment configuration is structurally valid JSON but fails
    /// cross-field validation.
    #[error("invalid config: {0}")]
    Config(String),

    /// A submodel spec cannot be realized (e.g. unreachable size ratio).
    #[error("spec error: {0}")]
    Spec(String),

    /// A binary dataset file is malformed; `offset` is the byte position
    /// at which the problem was detected.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// Local training produced a non-finite loss or parameter.
    #[error("divergence at round {round}, client {client}: {msg}")]
    Divergence { round: usize, client: u32, msg: String },

    /// A value that must be finite was NaN or infinite.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Config/JSON deserialization failure, with the offending field when known.
    #[error("parse error: {0}")]
    Parse(String),

    /// Filesystem failure, tagged with the path involved.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl NeflError {
    /// Stable process exit code for the CLI (0 is reserved for success).
    pub fn exit_code(&self) -> i32 {
        match self {
            NeflError::Config(_) | NeflError::Parse(_) | NeflError::Spec(_) => 2,
            NeflError::Format { .. } => 3,
            NeflError::Divergence { .. } | NeflError::NonFinite(_) => 4,
            NeflError::Io { .. } => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, NeflError>;

/// Shorthand for `NeflError::Io` that keeps the path in the error.
pub fn io_err(path: &std::path::Path, source: std::io::Error) -> NeflError {
    NeflError::Io { path: path.display().to_string(), source }
}
