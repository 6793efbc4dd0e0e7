use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },

    #[error("grid of size {width}x{height} is too small (need at least {min}x{min})")]
    GridTooSmall { width: usize, height: usize, min: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("unsupported image format in {path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("cannot read image {path}: {source}")]
    ImageRead {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error("cannot write image {path}: {source}")]
    ImageWrite {
        path: PathBuf,
        #[source]
        source: ::image::ImageError,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("index {index} out of range {range}")]
    IndexOutOfRange { index: usize, range: String },

    #[error("image {0} is a constrained key frame and cannot be updated")]
    ConstrainedIndex(usize),

    #[error("energy became non-finite at level {level}, iteration {iteration}, index {k}")]
    NonFiniteEnergy { level: usize, iteration: usize, k: usize },

    #[error("linear system is not positive definite at node {0}")]
    NotPositiveDefinite(usize),

    #[error("image has zero total mass")]
    ZeroMass,

    #[error("abscissae must be strictly increasing")]
    NonIncreasingTimes,

    #[error("shape does not fit inside the domain")]
    ShapeOutOfBounds,

    #[error("solver aborted ({source}); diagnostics written to {diagnostic}")]
    SolverAborted {
        diagnostic: PathBuf,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn dims(expected: impl std::fmt::Display, actual: impl std::fmt::Display) -> Self {
        Error::DimensionMismatch { expected: expected.to_string(), actual: actual.to_string() }
    }
}
