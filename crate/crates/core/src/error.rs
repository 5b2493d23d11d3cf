use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: argument outside the domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("cannot normalize a degenerate vector (norm {norm:e})")]
    DegenerateVector { norm: f64 },

    #[error("index {index} out of range for {len} entries")]
    Index { index: usize, len: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {what}")]
    NonFinite { what: String },

    #[error("backward already ran for this loss; record a new forward pass first")]
    GraphConsumed,

    #[error("sampler contract: {0}")]
    Sampler(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unsupported variant: {0}")]
    UnsupportedVariant(String),

    #[error("evaluation: {0}")]
    Evaluation(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error in {path}: {detail}")]
    Parse { path: PathBuf, detail: String },

    #[error("training aborted at step {step}: {source}")]
    Training {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
