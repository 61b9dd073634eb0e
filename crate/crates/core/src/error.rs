use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (ragged rows, bad header, size mismatch).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// File layout disagrees with its declared header.
    #[error("format error: {0}")]
    Format(String),

    /// A value violated a data invariant (non-finite entry, bad label, ...).
    #[error("validation error: {0}")]
    Validation(String),

    /// Caller passed an out-of-range or inconsistent argument.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// Two identical points make log-distance ratios undefined.
    #[error("duplicate points at rows {first} and {second} (distance 0); rerun with dedup")]
    DuplicatePoints { first: usize, second: usize },

    /// The estimator hit a zero distance.
    #[error("estimator undefined: {0}")]
    EstimatorUndefined(String),

    /// Iterative fit produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    /// compose_union could not reach the requested gap.
    #[error("placement failed: {0}")]
    Placement(String),

    /// Persisted bundle fails its checksum or internal consistency checks.
    #[error("integrity error: {0}")]
    Integrity(String),

    /// A lazily loaded per-cluster model file is missing.
    #[error("cluster {index} parameters missing: {path}")]
    MissingCluster { index: usize, path: String },

    /// A per-cluster operation failed; names the cluster.
    #[error("cluster {index}: {source}")]
    Cluster {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad caller input rather than runtime failure.
    /// The CLI maps these to exit code 2.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Argument(_) => true,
            Error::Cluster { source, .. } => source.is_usage(),
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
