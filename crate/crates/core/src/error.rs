use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    // graph construction
    #[error("invocation edges form a cycle through instance `{0}`")]
    CycleDetected(String),
    #[error("reference to unknown instance `{0}`")]
    DanglingReference(String),
    #[error("trace has no instances")]
    EmptyTrace,
    #[error("instance index {index} out of range for graph with {len} instances")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("graph is not a DAG")]
    NotADag,

    // encoders / layers
    #[error("unknown instance category `{0}`")]
    UnknownCategory(String),
    #[error("metric series is empty")]
    EmptySeries,
    #[error("instance has no neighbors")]
    NoNeighbors,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("vertex {0} belongs to no hyperedge")]
    ZeroDegree(usize),

    // training
    #[error("trace `{0}` has no usable root-cause label")]
    MissingLabel(String),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("finite-difference epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
    #[error("training set contains no anomalous traces")]
    EmptyTrainingSet,
    #[error("loss diverged at epoch {epoch}")]
    DivergedLoss { epoch: usize },

    // evaluation
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no traces fall inside the evaluation window")]
    EmptyWindow,

    // data io
    #[error("{file}:{line}: parse error: {msg}")]
    Parse { file: String, line: usize, msg: String },
    #[error("{file}:{line}: schema violation in field `{field}`")]
    SchemaViolation {
        file: String,
        line: usize,
        field: String,
    },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
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
