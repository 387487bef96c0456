use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("undefined reference partner `{0}` (missing or zero-sized)")]
    UndefinedReference(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at byte {position}: {message}")]
    Parse { position: usize, message: String },

    #[error("evaluation error on attribute `{attribute}`: {message}")]
    Evaluation { attribute: String, message: String },

    #[error("unresolvable format for partner(s): {}", partners.join(", "))]
    UnresolvableFormat { partners: Vec<String> },

    #[error("architecture mismatch: expected fingerprint {expected}, got {actual}")]
    ArchMismatch { expected: String, actual: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("point lies outside every ensemble cell")]
    OutOfDomain,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("session deadlocked; phases: {}", phases.join(", "))]
    Deadlock { phases: Vec<String> },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(position: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            position,
            message: message.into(),
        }
    }

    /// Whether the failure lies in the caller's input (bad configuration,
    /// unreadable or missing files, malformed text) rather than in a run.
    pub fn is_usage(&self) -> bool {
        match self {
            Error::Config(_) | Error::Parse { .. } | Error::Domain(_) | Error::UndefinedReference(_) => true,
            Error::Io(e) => matches!(
                e.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied | std::io::ErrorKind::InvalidData
            ),
            _ => false,
        }
    }
}
