use std::io;

/// Errors raised across the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("no observed events")]
    NoEvents,
    #[error("non-finite input")]
    NonFinite,
    #[error("empty input")]
    Empty,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid survival label: {0}")]
    InvalidLabel(String),
    #[error("degenerate covariate (column {0})")]
    DegenerateCovariate(usize),
    #[error("too many covariates: {covariates} covariates need more than {covariates} events, got {events}")]
    Unidentifiable { covariates: usize, events: usize },
    #[error("no comparable pairs")]
    NoComparablePairs,
    #[error("degenerate labels")]
    DegenerateLabels,
    #[error("attention over empty key set")]
    EmptyKeySet,
    #[error("no available modalities")]
    NoModalities,
    #[error("category not in schema: {attribute} = {value:?}")]
    UnknownCategory { attribute: String, value: String },
    #[error("degenerate numeric attribute: {0}")]
    DegenerateNumeric(String),
    #[error("invalid schema: {0}")]
    Schema(String),
    #[error("k must be ≥ 2 (got {0})")]
    InvalidFoldCount(usize),
    #[error("fold {fold}: {reason}")]
    Fold { fold: String, reason: String },
    #[error("missing modality {modality} for case {case_id}")]
    MissingModality { case_id: String, modality: String },
    #[error("censoring target {target} unreachable (closest realized fraction {realized})")]
    CensoringUnreachable { target: f64, realized: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
