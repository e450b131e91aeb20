use std::io;

use thiserror::Error;

/// Errors produced anywhere in the restoration toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("bad magic: expected \"ISOV\", found {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("unsupported dtype code {0}")]
    UnsupportedDtype(u32),
    #[error("dimension overflow: {nx}x{ny}x{nz} voxels does not fit in memory")]
    DimensionOverflow { nx: u32, ny: u32, nz: u32 },
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    TruncatedPayload { expected: u64, found: u64 },

    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("index {index} out of range for extent {extent}")]
    IndexOutOfRange { index: usize, extent: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("kernel extent {extent} exceeds the configured maximum {max}")]
    KernelTooLarge { extent: usize, max: usize },

    #[error("degenerate histogram: {0}")]
    DegenerateHistogram(String),
    #[error("histogram did not become bimodal within {0} smoothing passes; try the Otsu fallback")]
    NotBimodal(usize),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("metadata mismatch: {0}")]
    MetadataMismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("image codec error: {0}")]
    Codec(String),
}

pub type Result<T> = std::result::Result<T, Error>;
