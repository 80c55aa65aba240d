use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown entity pool `{0}`")]
    UnknownPool(String),
    #[error("empty pool")]
    EmptyPool,
    #[error("malformed pool file at line {line}: {reason}")]
    MalformedPool { line: usize, reason: String },
    #[error("invalid description spec: {0}")]
    InvalidSpec(String),
    #[error(
        "requested {requested} distinct descriptions for `{category}` but at most {achievable} are achievable"
    )]
    InsufficientRealizations {
        category: String,
        requested: usize,
        achievable: u128,
    },
    #[error("cannot parse at token {index} (`{token}`): {reason}")]
    Parse {
        index: usize,
        token: String,
        reason: String,
    },
    #[error("description {id} is not parseable: {source}")]
    UnparseableDescription {
        id: u64,
        #[source]
        source: Box<Error>,
    },
    #[error("relation packing unsatisfiable after {attempts} attempts")]
    UnsatisfiablePacking { attempts: usize },
    #[error("query has no content words")]
    EmptyQuery,
    #[error("scene mismatch: triplet refers to scene {expected}, got {actual}")]
    SceneMismatch { expected: u64, actual: u64 },
    #[error("intra-class pool has {available} negatives for category {category}, need {needed}")]
    InsufficientPool {
        category: u64,
        available: usize,
        needed: usize,
    },
    #[error("span {start}..{end} does not map into the positive item")]
    SpanMismatch { start: usize, end: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss mask is empty")]
    EmptyMask,
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("incomplete results: label {label} missing for scene {scene}")]
    IncompleteCoverage { label: u64, scene: u64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
