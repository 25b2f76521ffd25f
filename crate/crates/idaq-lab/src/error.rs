use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("not a probability vector ({context}): sum = {sum}")]
    NotNormalized { context: String, sum: f64 },

    #[error("invalid probability entry {value} in {context}")]
    NegativeProbability { context: String, value: f64 },

    #[error("reward support value {0} outside [0, 1]")]
    RewardOutOfRange(f64),

    #[error("row ({state}, {action}) has no support in this model")]
    UnsupportedRow { state: usize, action: usize },

    #[error("policy is not batch-constrained: puts mass {mass} on unsupported pair ({state}, {action})")]
    NotBatchConstrained { state: usize, action: usize, mass: f64 },

    #[error("sub-dataset for hypothesis {0} is empty")]
    EmptySubDataset(usize),

    #[error("exact evaluation tree exceeds {limit} leaves; use monte-carlo")]
    TreeTooLarge { limit: usize },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero-norm reference trajectory")]
    ZeroNorm,

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
