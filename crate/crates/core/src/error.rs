use std::path::PathBuf;

/// Errors produced anywhere in the engine.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    Shape {
        context: &'static str,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("zero variance: {0}")]
    ZeroVariance(String),
    #[error("duplicate points at index pairs {pairs:?}")]
    DuplicatePoints { pairs: Vec<(usize, usize)> },
    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },
    #[error("fold {fold} is empty")]
    EmptyFold { fold: usize },
    #[error("fold {fold} has {rows} training rows, fewer than min_leaf = {min_leaf}")]
    FoldTooSmall {
        fold: usize,
        rows: usize,
        min_leaf: usize,
    },
    #[error("unknown modality `{0}`")]
    UnknownModality(String),
    #[error("card for {modality} is {len} characters, limit is {limit}")]
    Overlength {
        modality: String,
        len: usize,
        limit: usize,
    },
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("could not parse {what}: {detail}")]
    Parse { what: &'static str, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
