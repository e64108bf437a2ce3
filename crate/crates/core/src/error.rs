use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("tensor data length {len} does not match shape {shape:?}")]
    BadTensor { shape: Vec<usize>, len: usize },

    #[error("network build failed: {0}")]
    Build(String),

    #[error("network has no Conv layer")]
    NoConvLayer,

    #[error("target class {index} out of range for {num_classes} classes")]
    TargetOutOfRange { index: usize, num_classes: usize },

    #[error("checkpoint corrupt: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),

    #[error("manifest {path}, line {line}: {message}")]
    Manifest {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("unknown sample id {0}")]
    UnknownSample(usize),

    #[error("invalid proportions: {0}")]
    Proportions(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("iteration {iteration}: drop-out left no active samples")]
    EmptyView { iteration: usize },

    #[error("run has {available} checkpoints, highlight needs iterations {latest} and {earlier}")]
    InsufficientCheckpoints {
        available: usize,
        latest: usize,
        earlier: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        source: image::ImageError,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
