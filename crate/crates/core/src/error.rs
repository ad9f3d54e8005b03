use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, TlnmfError>;

#[derive(Debug, Error)]
pub enum TlnmfError {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    },

    #[error("{0}: entries must be strictly positive")]
    NonPositive(&'static str),

    #[error("{0}: entries must be finite")]
    NonFinite(&'static str),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("signal of {len} samples is shorter than one frame of {frame_len} samples")]
    SignalTooShort { len: usize, frame_len: usize },

    #[error("multichannel input ({channels} channels) requires the downmix flag")]
    Multichannel { channels: u16 },

    #[error("unsupported WAV encoding: {0}")]
    UnsupportedEncoding(String),

    #[error("frame matrix carries no synthesis window (hop/window metadata missing)")]
    MissingWindow,

    #[error("degenerate projection: smallest singular value {smallest:e} vs largest {largest:e}")]
    DegenerateProjection { smallest: f64, largest: f64 },

    #[error("line search called with a zero search direction")]
    ZeroDirection,

    #[error("zero-power {0}")]
    ZeroEnergy(&'static str),

    #[error("reference signals are linearly dependent")]
    RankDeficient,

    #[error("WAV error in {path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: hound::Error,
    },

    #[error("I/O error in {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error in {path}: {message}")]
    Csv { path: PathBuf, message: String },
}

impl TlnmfError {
    pub(crate) fn shape(
        context: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    ) -> Self {
        TlnmfError::ShapeMismatch {
            context,
            expected,
            actual,
        }
    }

    /// True for failures caused by the filesystem or malformed files.
    pub fn is_io(&self) -> bool {
        matches!(
            self,
            TlnmfError::Wav { .. } | TlnmfError::Io { .. } | TlnmfError::Csv { .. }
        )
    }
}
