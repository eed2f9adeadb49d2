use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("environment `{env}` cannot host a route of length {len}")]
    RouteTooLong { env: String, len: usize },
    #[error("span {i}..={j} is not a {expected} phrase")]
    WrongSpanKind { i: usize, j: usize, expected: &'static str },
    #[error("phrase `{0}` has no row in the direction table")]
    NotInTable(String),
    #[error("instruction would exceed {0} tokens")]
    TooLong(usize),
    #[error("no candidate phrase available for `{0}`")]
    NoReplacement(String),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("training diverged: {0}")]
    NonFinite(String),
    #[error("threshold not selected")]
    ThresholdUnset,
    #[error("development set must contain both labels")]
    SingleClass,
    #[error("length mismatch: {0} predictions vs {1} gold labels")]
    LengthMismatch(usize, usize),
    #[error("highlight is stale: tokens changed since it was computed")]
    StaleSpan,
    #[error("invalid example: {0}")]
    InvalidExample(String),
    #[error("format error on line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
