use std::io;
use std::path::PathBuf;

/// Errors raised while decoding the binary dataset and checkpoint formats.
#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },
    #[error("file truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("{extra} unexpected trailing bytes")]
    TrailingBytes { extra: usize },
    #[error("crc32 mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Crc { stored: u32, computed: u32 },
    #[error("malformed header: {0}")]
    Header(String),
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid condition: {0}")]
    Spec(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("inconsistent state: {0}")]
    State(String),
    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("i/o error on {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure_shape {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Shape(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure_shape;
