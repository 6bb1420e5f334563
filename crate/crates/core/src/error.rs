use std::path::PathBuf;

use thiserror::Error;

/// Errors from IDX ingestion.
#[derive(Debug, Error)]
pub enum IdxError {
    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated file ({len} bytes, need {needed})")]
    Truncated {
        path: PathBuf,
        len: usize,
        needed: usize,
    },
    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Idx(#[from] IdxError),
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed container: {0}")]
    Container(String),
    #[error("bound check requires a convex model with l2 > 0")]
    NonConvexModel,
    #[error("solver did not reach gradient norm {tol:e} within {iters} iterations (last {last:e})")]
    NoConvergence { tol: f64, iters: usize, last: f64 },
    #[error("gradient probes missing from run log")]
    ProbesAbsent,
    #[error("schedule mismatch: {0}")]
    ScheduleMismatch(String),
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("serialization: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
