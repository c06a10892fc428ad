use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("sh degree {0} is out of range (0..=3)")]
    ShDegree(u32),

    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("quantized value {value} at index {index} exceeds {bits}-bit range")]
    QuantOutOfRange { index: usize, value: u32, bits: u8 },

    #[error("unsupported bit depth {0}")]
    BitDepth(u8),

    #[error("morton coordinate {0} does not fit in 21 bits")]
    MortonOverflow(u32),

    #[error("frame is empty")]
    EmptyFrame,

    #[error("frame group is empty")]
    EmptyGroup,

    #[error("splat count mismatch in group: frame {frame} has {found}, expected {expected}")]
    SplatCountMismatch { frame: usize, expected: usize, found: usize },

    #[error("sh degree mismatch: expected {expected}, found {found}")]
    ShDegreeMismatch { expected: u8, found: u8 },

    #[error("plane dimensions inconsistent: {0}")]
    PlaneShape(String),

    #[error("frame {frame} out of range (group has {len} frames)")]
    FrameOutOfRange { frame: usize, len: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("codec backend unavailable: {0}")]
    BackendUnavailable(String),

    #[error("encoder process failed: {0}")]
    EncoderFailed(String),

    #[error("truncated or corrupt bitstream: {0}")]
    Bitstream(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("manifest version {found} is not supported (expected {expected})")]
    ManifestVersion { expected: u32, found: u32 },

    #[error("missing segment {}", .0.display())]
    MissingSegment(PathBuf),

    #[error("splat file {}: {msg}", path.display())]
    SplatFile { path: PathBuf, msg: String },

    #[error("motion fit diverged at iteration {iteration}: loss = {loss}")]
    Diverged { iteration: usize, loss: f64 },

    #[error("network error: {0}")]
    Network(String),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
