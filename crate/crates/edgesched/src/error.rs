use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dataflow `{dataflow}` is not a DAG: cycle involving vertex `{vertex}`")]
    InvalidDag { dataflow: String, vertex: String },
    #[error("dataflow `{dataflow}` is malformed: {detail}")]
    InvalidSpec { dataflow: String, detail: String },
    #[error("no catalog profile for query type `{query_type}`")]
    ProfileNotFound { query_type: String },
    #[error("vertex `{vertex}` of dataflow `{dataflow}` has no resource assignment")]
    IncompleteMapping { dataflow: String, vertex: String },
    #[error("unknown resource id {0}")]
    ResourceNotFound(u32),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("instance too large for exhaustive search: {0}")]
    OracleGuard(String),
    #[error("no valid placement exists")]
    NoValidPlacement,
    #[error("workload generation failed: {0}")]
    Generation(String),
    #[error("trace provenance mismatch: {0}")]
    Provenance(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
