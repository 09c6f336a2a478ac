use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error in {source_name} at row {row}: {message}")]
    Parse {
        source_name: String,
        row: usize,
        message: String,
    },

    /// `index` is the input line for CSV rows, the 1-based file position for
    /// directories, and the 0-based position for in-memory sets.
    #[error("inconsistent dimension: expected {expected} coordinates, found {found} at row {index}")]
    InconsistentDimension {
        expected: usize,
        found: usize,
        index: usize,
    },

    #[error("too few samples: need at least {required}, got {got}")]
    TooFewSamples { required: usize, got: usize },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("degenerate shape: all landmarks coincide (sample {0})")]
    DegenerateShape(usize),

    #[error("shape set is not aligned; run generalized Procrustes first")]
    NotAligned,

    #[error("model order {order} out of range 1..={max}")]
    OrderOutOfRange { order: usize, max: usize },

    #[error("singular weighted normal equations at order {order}")]
    SingularSystem { order: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("all eigenvalues are zero")]
    ZeroVariance,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("i/o error on {path}: {source}")]
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

    /// True for failures of the numerical routines rather than of the input data.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::SingularSystem { .. } | Error::ZeroVariance | Error::DegenerateShape(_)
        )
    }
}
