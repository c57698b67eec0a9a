use serde::Serialize;
use thiserror::Error;

use perfce_core::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Domain(#[from] CoreError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot bind {addr}: {message}")]
    Bind { addr: String, message: String },
    #[error("load error: {0}")]
    Load(String),
}

#[derive(Serialize)]
struct ErrorBody<'a> {
    error: ErrorDetail<'a>,
}

#[derive(Serialize)]
struct ErrorDetail<'a> {
    kind: &'a str,
    message: String,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Domain(e) => error_kind(e),
            CliError::Usage(_) => "usage",
            CliError::Bind { .. } => "bind_error",
            CliError::Load(_) => "load_error",
        }
    }

    /// One-line JSON written to stderr on failure.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&ErrorBody {
            error: ErrorDetail {
                kind: self.kind(),
                message: self.to_string(),
            },
        })
        .expect("error body serializes")
    }
}

/// Stable snake_case name of a domain error variant.
pub fn error_kind(e: &CoreError) -> &'static str {
    match e {
        CoreError::CycleDetected(_) => "cycle_detected",
        CoreError::UnknownNode(_) => "unknown_node",
        CoreError::InvalidGraph(_) => "invalid_graph",
        CoreError::ParseError { .. } => "parse_error",
        CoreError::SchemaError(_) => "schema_error",
        CoreError::InvalidDataset(_) => "invalid_dataset",
        CoreError::Io(_) => "io",
        CoreError::DegenerateData(_) => "degenerate_data",
        CoreError::NoUsableColumns(_) => "no_usable_columns",
        CoreError::InsufficientFolds(_) => "insufficient_folds",
        CoreError::WeakInstrument { .. } => "weak_instrument",
        CoreError::EdgeFit { .. } => "edge_fit",
        CoreError::UnquantifiedEdge { .. } => "unquantified_edge",
        CoreError::NotAnAncestor { .. } => "not_an_ancestor",
        CoreError::NotAncestors { .. } => "not_ancestors",
        CoreError::EmptySamples => "empty_samples",
        CoreError::UnknownChaosVariable(_) => "unknown_chaos_variable",
        CoreError::UnknownAnomalyKind(_) => "unknown_anomaly_kind",
        CoreError::LengthMismatch(..) => "length_mismatch",
        CoreError::ZeroVarianceTruth => "zero_variance_truth",
        CoreError::EmptyRelevantSet => "empty_relevant_set",
        CoreError::InvalidArgument(_) => "invalid_argument",
    }
}
