use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid record: {}", .0.join("; "))]
    InvalidRecord(Vec<String>),

    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },

    #[error("record rejected: {flagged} of {total} ratio points had a vanishing denominator")]
    RecordRejected { flagged: usize, total: usize },

    #[error("{format} format error: {msg}")]
    Format { format: &'static str, msg: String },

    #[error("unknown key `{key}`{}", .suggestion.as_ref().map(|s| format!(" (did you mean `{s}`?)")).unwrap_or_default())]
    UnknownKey {
        key: String,
        suggestion: Option<String>,
    },

    #[error("invalid value `{value}` for `{key}`: expected {expected}")]
    InvalidValue {
        key: String,
        value: String,
        expected: String,
    },

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(format: &'static str, msg: impl Into<String>) -> Self {
        Error::Format {
            format,
            msg: msg.into(),
        }
    }

    /// True for configuration-level problems (bad keys, bad values).
    pub fn is_config(&self) -> bool {
        matches!(self, Error::UnknownKey { .. } | Error::InvalidValue { .. })
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence(_))
    }
}
