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

    #[error("failed to decode image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("no frames")]
    NoFrames,

    #[error("frame sequence has a gap at index {0}")]
    FrameGap(u64),

    #[error("frame {index} is {found_w}x{found_h}, expected {expected_w}x{expected_h}")]
    MixedDimensions {
        index: u64,
        expected_w: u32,
        expected_h: u32,
        found_w: u32,
        found_h: u32,
    },

    #[error("cannot keep {keep} fps from a {source_fps} fps stream")]
    Downsample { keep: f64, source_fps: f64 },

    #[error("scene spec line {line}: {message}")]
    SceneSpec { line: usize, message: String },

    #[error("actor {0} has zero area")]
    ZeroAreaActor(u32),

    #[error("{path}:{line}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("format version mismatch in {path}: expected {expected}, found {found}")]
    VersionMismatch {
        path: PathBuf,
        expected: String,
        found: String,
    },

    #[error("checksum mismatch in {0}")]
    Checksum(PathBuf),

    #[error("config fingerprint mismatch: index built with {stored}, current config is {current}")]
    Fingerprint { stored: String, current: String },

    #[error("index invariant violated in chunk {chunk}: {message}")]
    Invariant { chunk: u32, message: String },

    #[error("detector has no output for frame {0}")]
    MissingFrame(u64),

    #[error("trajectory resolution did not converge in chunk {0}")]
    NonConvergence(u32),

    #[error("chunk {chunk} failed: {source}")]
    Chunk {
        chunk: u32,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("frame ranges differ: {0} vs {1} frames")]
    RangeMismatch(usize, usize),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than a bug or
    /// environment failure.
    pub fn is_input_error(&self) -> bool {
        match self {
            Error::Io { .. } | Error::NonConvergence(_) => false,
            Error::Chunk { source, .. } => source.is_input_error(),
            _ => true,
        }
    }
}
