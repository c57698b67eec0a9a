use thiserror::Error;

/// Errors raised by the diagnosis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("cycle detected through nodes {0:?}")]
    CycleDetected(Vec<String>),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("parse error at line {line}, column {column}: {message}")]
    ParseError {
        line: u64,
        column: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    SchemaError(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("io error: {0}")]
    Io(String),
    #[error("degenerate data: {0}")]
    DegenerateData(String),
    #[error("no usable columns: {0}")]
    NoUsableColumns(String),
    #[error("insufficient folds: {0}")]
    InsufficientFolds(String),
    #[error("weak instrument `{instrument}` for `{treatment}`: first-stage R² {r2:.4} below {threshold}")]
    WeakInstrument {
        instrument: String,
        treatment: String,
        r2: f64,
        threshold: f64,
    },
    #[error("edge {parent} -> {child}: {source}")]
    EdgeFit {
        parent: String,
        child: String,
        source: Box<Error>,
    },
    #[error("edge {parent} -> {child} is unquantified")]
    UnquantifiedEdge { parent: String, child: String },
    #[error("`{candidate}` is not an ancestor of `{target}`")]
    NotAnAncestor { candidate: String, target: String },
    #[error("nodes are not ancestors of `{target}`: {candidates:?}")]
    NotAncestors {
        candidates: Vec<String>,
        target: String,
    },
    #[error("empty samples")]
    EmptySamples,
    #[error("unknown chaos variable `{0}`")]
    UnknownChaosVariable(String),
    #[error("unknown anomaly kind `{0}`")]
    UnknownAnomalyKind(String),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("truth has zero variance")]
    ZeroVarianceTruth,
    #[error("relevant set is empty")]
    EmptyRelevantSet,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::SchemaError(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
