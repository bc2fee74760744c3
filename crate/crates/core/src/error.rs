use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("malformed header: {0}")]
    MalformedHeader(String),

    #[error("truncated {block} block: expected {expected} bytes, found {found}")]
    Truncated {
        block: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("label timestamp {timestamp} out of range for session of {num_samples} samples")]
    TimestampOutOfRange { timestamp: u64, num_samples: u64 },

    #[error("invalid session: {0}")]
    InvalidSession(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("symbol {symbol} outside vocabulary of size {vocab_size}")]
    SymbolOutOfVocab { symbol: u32, vocab_size: usize },

    #[error("empty reference: character error rate is undefined for N = 0")]
    EmptyReference,

    #[error("unknown user id {0:?}")]
    UnknownUser(String),

    #[error("user {0:?} belongs to the generic training set")]
    UserInTrainSet(String),

    #[error("empty manifest: {0}")]
    EmptyManifest(String),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short stable identifier, used in machine-readable CLI error output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::BadMagic { .. } => "bad_magic",
            Error::MalformedHeader(_) => "malformed_header",
            Error::Truncated { .. } => "truncated",
            Error::TimestampOutOfRange { .. } => "timestamp_out_of_range",
            Error::InvalidSession(_) => "invalid_session",
            Error::InvalidConfig(_) => "invalid_config",
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::SymbolOutOfVocab { .. } => "symbol_out_of_vocab",
            Error::EmptyReference => "empty_reference",
            Error::UnknownUser(_) => "unknown_user",
            Error::UserInTrainSet(_) => "user_in_train_set",
            Error::EmptyManifest(_) => "empty_manifest",
            Error::IncompatibleCheckpoint(_) => "incompatible_checkpoint",
            Error::Json(_) => "json",
        }
    }
}
