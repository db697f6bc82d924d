use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },

    #[error("loss node has {numel} elements, expected a scalar")]
    NotScalar { numel: usize },

    #[error("{op} needs a batch of at least 2, got {n}")]
    BatchTooSmall { op: &'static str, n: usize },

    #[error("bad IDX magic 0x{0:08x}")]
    BadMagic(u32),

    #[error("truncated file: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },

    #[error("label {label} out of range (classes = {classes})")]
    LabelOutOfRange { label: u32, classes: u32 },

    #[error("invalid manifest: {0}")]
    ManifestInvalid(String),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("invalid checkpoint: {0}")]
    CheckpointInvalid(String),

    #[error("bad checkpoint header")]
    BadHeader,

    #[error("unsupported checkpoint version {0}")]
    VersionUnsupported(u16),

    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },

    #[error("batch size {0} must be even when mixing replay items")]
    OddBatch(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// Errors caused by the caller's configuration or inputs rather than by a
    /// failure during the run.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config(_) | Error::ManifestInvalid(_))
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
