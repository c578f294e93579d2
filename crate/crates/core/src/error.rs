use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate mesh: {0}")]
    DegenerateMesh(String),

    #[error("mesh invariant violated ({invariant}): {detail}")]
    MeshInvariant {
        invariant: &'static str,
        detail: String,
    },

    #[error("{path}:{line}: parse error: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("density invalid: {0}")]
    Density(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsolvable: {0}")]
    Unsolvable(String),

    #[error("mesh graph is disconnected: {0} nodes unreachable from the boundary")]
    Disconnected(usize),

    #[error("missing trace for control {0}")]
    MissingTrace(usize),

    #[error("time grid: {0}")]
    TimeGrid(String),

    #[error("io error on {path}: {source}")]
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
