use thiserror::Error;

/// Errors raised by the ranking conformal library and harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty rank domain")]
    EmptyRankDomain,

    #[error("rank out of range: {rank} not in [1, {len}]")]
    RankOutOfRange { rank: usize, len: usize },

    #[error("ties detected among values; call jitter_ties first")]
    TiesDetected,

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("support index {k} outside {{0, ..., {max}}}")]
    OutsideSupport { k: i64, max: usize },

    #[error("delta too large for (n={n}, m={m}): {reason}")]
    DeltaTooLarge { n: usize, m: usize, reason: String },

    #[error("enumeration too large: N={total} exceeds the limit {limit}")]
    EnumerationTooLarge { total: usize, limit: usize },

    #[error("singular least-squares system")]
    SingularSystem,

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("data error in {source_name} row {row}: {message}")]
    Data {
        source_name: String,
        row: usize,
        message: String,
    },

    #[error("internal invariant violated: {0}")]
    Invariant(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn data(source_name: impl Into<String>, row: usize, message: impl Into<String>) -> Self {
        Error::Data {
            source_name: source_name.into(),
            row,
            message: message.into(),
        }
    }

    /// Process exit code: 1 config error, 2 data error, 3 internal invariant violation.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidParameter { .. } | Error::DeltaTooLarge { .. } => 1,
            Error::Data { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::TiesDetected
            | Error::EmptyRankDomain
            | Error::RankOutOfRange { .. }
            | Error::OutsideSupport { .. }
            | Error::EnumerationTooLarge { .. }
            | Error::SingularSystem => 2,
            Error::Invariant(_) => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
