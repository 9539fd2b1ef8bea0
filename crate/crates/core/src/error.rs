use thiserror::Error;

pub type Result<T> = std::result::Result<T, TuckerError>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuckerError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation: {0}")]
    Validation(String),

    #[error("numeric failure: {0}")]
    NumericFailure(String),

    #[error("resource limit: {0}")]
    ResourceLimit(String),

    #[error("internal consistency: {0}")]
    InternalConsistency(String),

    #[error("io: {0}")]
    Io(String),
}

impl TuckerError {
    /// Short stable tag used as the prefix of CLI diagnostics.
    pub fn code(&self) -> &'static str {
        match self {
            TuckerError::InvalidArgument(_) => "invalid-argument",
            TuckerError::Parse { .. } => "parse",
            TuckerError::Validation(_) => "validation",
            TuckerError::NumericFailure(_) => "numeric-failure",
            TuckerError::ResourceLimit(_) => "resource-limit",
            TuckerError::InternalConsistency(_) => "internal-consistency",
            TuckerError::Io(_) => "io",
        }
    }

    /// The message without the kind prefix that `Display` adds.
    pub fn detail(&self) -> String {
        match self {
            TuckerError::Parse { line, message } => format!("line {line}: {message}"),
            TuckerError::InvalidArgument(m)
            | TuckerError::Validation(m)
            | TuckerError::NumericFailure(m)
            | TuckerError::ResourceLimit(m)
            | TuckerError::InternalConsistency(m)
            | TuckerError::Io(m) => m.clone(),
        }
    }

    /// Prepends context to the message while keeping the error kind.
    pub fn context(self, ctx: impl std::fmt::Display) -> Self {
        match self {
            TuckerError::InvalidArgument(m) => TuckerError::InvalidArgument(format!("{ctx}: {m}")),
            TuckerError::Parse { line, message } => TuckerError::Parse {
                line,
                message: format!("{ctx}: {message}"),
            },
            TuckerError::Validation(m) => TuckerError::Validation(format!("{ctx}: {m}")),
            TuckerError::NumericFailure(m) => TuckerError::NumericFailure(format!("{ctx}: {m}")),
            TuckerError::ResourceLimit(m) => TuckerError::ResourceLimit(format!("{ctx}: {m}")),
            TuckerError::InternalConsistency(m) => {
                TuckerError::InternalConsistency(format!("{ctx}: {m}"))
            }
            TuckerError::Io(m) => TuckerError::Io(format!("{ctx}: {m}")),
        }
    }
}

impl From<std::io::Error> for TuckerError {
    fn from(e: std::io::Error) -> Self {
        TuckerError::Io(e.to_string())
    }
}
