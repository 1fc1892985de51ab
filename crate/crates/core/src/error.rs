use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is supported")]
    UnsupportedMaxval(u32),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: &'static str, found: Vec<u8> },
    #[error("size mismatch: expected {expected} bytes of payload, found {found}")]
    SizeMismatch { expected: usize, found: usize },
    #[error("non-finite value at offset {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("missing feature file {0}")]
    MissingFeatureFile(PathBuf),
    #[error("no {what} for frame {frame}")]
    MissingInput { what: &'static str, frame: usize },
    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("frame {frame}: {source}")]
    Stage {
        frame: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Attaches the index of the frame being processed when the error happened.
    pub fn at_frame(self, frame: usize) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                frame,
                source: Box::new(e),
            },
        }
    }

    /// Frame index recorded by [`Error::at_frame`], if any.
    pub fn frame(&self) -> Option<usize> {
        match self {
            Error::Stage { frame, .. } => Some(*frame),
            _ => None,
        }
    }
}
