use std::path::PathBuf;

use crate::profiles::Violation;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("confidence criterion {sigma} not in probability table (available: {available:?})")]
    MissingSigma { sigma: f64, available: Vec<f64> },

    #[error("layer index {index} outside 1..={layers}")]
    LayerOutOfRange { index: usize, layers: usize },

    #[error("partition point {point} outside 0..={layers}")]
    PartitionOutOfRange { point: usize, layers: usize },

    #[error("edge latency undefined: {work} FLOP of edge work with zero allocation")]
    UndefinedEdgeLatency { work: f64 },

    #[error("invalid profile `{id}`: {}", format_violations(.violations))]
    InvalidProfile {
        id: String,
        violations: Vec<Violation>,
    },

    #[error("unknown model `{0}`")]
    UnknownModel(String),

    #[error("edge capacity must be positive, got {0}")]
    NonPositiveCapacity(f64),

    #[error("no users admitted by the omniscient auction")]
    EmptyAdmittedSet,

    #[error("delta is unbounded: admitted volume {volume} does not exceed the largest request {largest}")]
    DeltaUnbounded { volume: f64, largest: f64 },

    #[error("delta must exceed 1, got {0}")]
    DeltaNotAboveOne(f64),

    #[error("target revenue not settled after {cap} draws")]
    IterationCapExceeded { cap: u32 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("brute-force oracle limited to {cap} users, got {got}")]
    OracleCapExceeded { cap: usize, got: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}: row {row}: {message}")]
    Trace {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("trace `{name}` has {have} slots, run needs {need}")]
    TraceTooShort {
        name: String,
        have: usize,
        need: usize,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(|v| format!("[{}] {}", v.code.as_str(), v.message))
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
