use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("graph error: {0}")]
    Graph(String),
    #[error("backward output must be scalar, got shape {0:?}")]
    NonScalarOutput(Vec<usize>),
    #[error("wrt[{0}] is unreachable from the output")]
    Unreachable(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("class index {class} out of range for {classes} classes")]
    ClassOutOfRange { class: usize, classes: usize },

    #[error("bad magic: expected {expected}, found {found}")]
    BadMagic { expected: String, found: String },
    #[error("unsupported version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input: needed {needed} bytes at offset {offset}, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed data: {0}")]
    Malformed(String),

    #[error("numerical instability: {quantity} became non-finite at epoch {epoch}, step {step}")]
    Stability {
        quantity: String,
        epoch: usize,
        step: usize,
    },
    #[error("dataset has no masks")]
    MissingMasks,
    #[error("dataset has no labels")]
    MissingLabels,
    #[error("group {0} is empty")]
    EmptyGroup(usize),
    #[error("output for class {0} is zero at the full input; fractional change undefined")]
    ZeroNormalization(usize),

    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
