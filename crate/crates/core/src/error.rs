use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Missing or unparsable header, bad magic, unsupported dtype.
    #[error("format error: {0}")]
    Format(String),

    #[error("size error: expected {expected} bytes, found {found}")]
    Size { expected: usize, found: usize },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("no valid pixels to compute statistics over")]
    EmptyStatistics,

    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),

    #[error("clustering degeneracy: {0}")]
    ClusteringDegeneracy(String),

    /// Image dimensions are not divisible by the extractor's downsample factor.
    #[error("padding required: {0}")]
    Padding(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
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

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// True if this error (or the error wrapped by a stage label) is a
    /// configuration problem rather than a processing failure.
    pub fn is_config(&self) -> bool {
        match self {
            Error::Config(_) => true,
            Error::Stage { source, .. } => source.is_config(),
            _ => false,
        }
    }
}
