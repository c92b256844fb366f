use thiserror::Error;

/// Errors raised by the core library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid span [{start}, {end}]: endpoints must be finite, non-negative and ordered")]
    InvalidSpan { start: f64, end: f64 },

    #[error("invalid duration {0}: must be finite and positive")]
    InvalidDuration(f64),

    #[error("precondition violated{}: {message}", sample.as_deref().map(|s| format!(" for sample {s}")).unwrap_or_default())]
    Precondition { sample: Option<String>, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("group has {0} responses; at least 2 are required")]
    GroupTooSmall(usize),

    #[error("non-finite importance ratio in sample {sample_id}")]
    NonFiniteRatio { sample_id: String },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty record set")]
    EmptyRecords,

    #[error("no records in the {0} subset")]
    EmptySubset(String),

    #[error("missing sample ids: {}", .0.join(", "))]
    MissingSamples(Vec<String>),

    #[error("duplicate sample id {id} (line {line})")]
    DuplicateId { id: String, line: usize },

    #[error("{rejected} line(s) rejected in strict mode; first: line {first_line}: {first_reason}")]
    RejectedLines {
        rejected: usize,
        first_line: usize,
        first_reason: String,
    },

    #[error("length mismatch: {left} predictions vs {right} gold labels")]
    LengthMismatch { left: usize, right: usize },

    #[error("divergence is infinite: reference assigns zero probability to action {action}")]
    InfiniteDivergence { action: usize },

    #[error("classifier transport error: {0}")]
    Transport(String),

    #[error("classification failed: {message}; raw response: {raw}")]
    Classification { message: String, raw: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn precondition(message: impl Into<String>) -> Self {
        Error::Precondition {
            sample: None,
            message: message.into(),
        }
    }

    /// Attaches a sample id to precondition errors; other variants pass through.
    pub fn for_sample(self, id: &str) -> Self {
        match self {
            Error::Precondition { message, .. } => Error::Precondition {
                sample: Some(id.to_string()),
                message,
            },
            other => other,
        }
    }

    /// True for failures that may succeed on retry (network trouble).
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Transport(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
