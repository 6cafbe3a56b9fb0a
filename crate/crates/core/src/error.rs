use thiserror::Error;

/// Errors surfaced by the library. Shape errors inside the tape are programming
/// errors and panic instead of appearing here.
#[derive(Debug, Error)]
pub enum Error {
    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite adjoint produced by `{0}`")]
    NonFinite(&'static str),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("schema error in field `{field}`: {detail}")]
    Schema { field: String, detail: String },

    #[error("degenerate window: max equals min over the extended window")]
    DegenerateWindow,

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub(crate) fn schema(field: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Schema {
            field: field.into(),
            detail: detail.into(),
        }
    }
}
