use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("no supervised positions")]
    EmptyMask,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    Overlength { len: usize, max: usize },

    #[error("visual slot error: {0}")]
    Slot(String),

    #[error("retrieval error: {0}")]
    Retrieval(String),

    #[error("unknown image encoder `{0}`")]
    UnknownEncoder(String),

    #[error("freeze plan `{plan}` is incompatible with this model: {reason}")]
    Plan { plan: String, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("corpus error: {0}")]
    Corpus(String),

    #[error("metric error: {0}")]
    Metric(String),

    #[error("ids do not align between predictions and references: {0:?}")]
    IdMismatch(Vec<String>),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl Error {
    /// Stable short name of the variant, for machine-readable diagnostics.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::NonFinite(_) => "non-finite",
            Error::EmptyMask => "empty-mask",
            Error::Config(_) => "config",
            Error::Overlength { .. } => "overlength",
            Error::Slot(_) => "slot",
            Error::Retrieval(_) => "retrieval",
            Error::UnknownEncoder(_) => "unknown-encoder",
            Error::Plan { .. } => "plan",
            Error::Checkpoint(_) => "checkpoint",
            Error::Corpus(_) => "corpus",
            Error::Metric(_) => "metric",
            Error::IdMismatch(_) => "id-mismatch",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Toml(_) => "toml",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }
}
