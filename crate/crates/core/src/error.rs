//! Crate-wide error type.
//!
//! Every fallible public operation returns [`Result`]. Each variant carries a
//! stable machine-readable code (see [`Error::code`]) so callers such as the
//! CLI can emit structured error reports.

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// A tensor or layer shape does not match what the consumer expects.
    #[error("shape mismatch at {location}: expected {expected}, got {got}")]
    ShapeMismatch {
        location: String,
        expected: String,
        got: String,
    },

    /// A clip mode other than `None` was requested without a reference trace.
    #[error("gradient hook with mode {mode} requires a reference trace")]
    MissingReferenceTrace { mode: &'static str },

    /// An argument violated a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A layer index was outside the model's weighted-layer range.
    #[error("layer index {index} out of range (model has {count} weighted layers)")]
    LayerIndexOutOfRange { index: usize, count: usize },

    /// Weight file does not start with the expected magic bytes.
    #[error("weight file has bad magic bytes")]
    BadMagic,

    /// Weight blob is shorter than the header declares.
    #[error("weight blob truncated: header declares {expected} bytes, found {got}")]
    TruncatedBlob { expected: usize, got: usize },

    /// Weight file header is inconsistent with the blob or with itself.
    #[error("weight header mismatch: {0}")]
    HeaderMismatch(String),

    /// Image file header is malformed.
    #[error("malformed image header: {0}")]
    MalformedHeader(String),

    /// Image payload size disagrees with its header.
    #[error("image size mismatch: expected {expected} bytes, got {got}")]
    SizeMismatch { expected: usize, got: usize },

    /// IDX image/label files disagree on the sample count.
    #[error("dataset count mismatch: {images} images vs {labels} labels")]
    CountMismatch { images: usize, labels: usize },

    /// The fixture trainer failed to reach the required held-out accuracy.
    #[error("fixture underfit: held-out accuracy {accuracy:.4} below target {target:.4}")]
    FixtureUnderfit { accuracy: f64, target: f64 },

    /// An optimization produced a non-finite loss.
    #[error("optimization diverged at iteration {iteration}: loss is not finite")]
    Diverged { iteration: usize },

    /// Non-finite values appeared where finite ones are required.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Stable machine-readable code for this error.
    pub fn code(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::MissingReferenceTrace { .. } => "missing-reference-trace",
            Error::InvalidArgument(_) => "invalid-argument",
            Error::LayerIndexOutOfRange { .. } => "layer-index-out-of-range",
            Error::BadMagic => "bad-magic",
            Error::TruncatedBlob { .. } => "truncated-blob",
            Error::HeaderMismatch(_) => "header-mismatch",
            Error::MalformedHeader(_) => "malformed-header",
            Error::SizeMismatch { .. } => "size-mismatch",
            Error::CountMismatch { .. } => "count-mismatch",
            Error::FixtureUnderfit { .. } => "fixture-underfit",
            Error::Diverged { .. } => "diverged",
            Error::NonFinite(_) => "non-finite",
            Error::Json(_) => "json",
            Error::Io(_) => "io",
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
