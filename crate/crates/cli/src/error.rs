use belstable_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("comparison failed: {failed} of {rows} rows exceed |z| = {threshold}")]
    CompareFailed {
        failed: usize,
        rows: usize,
        threshold: f64,
    },
}

impl CliError {
    pub fn field(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config { .. } | Self::Schema(_) => 2,
            Self::Core(CoreError::InvalidParameter { .. })
            | Self::Core(CoreError::LengthMismatch { .. })
            | Self::Core(CoreError::Parse(_)) => 2,
            Self::Core(CoreError::Divergence { .. }) => 3,
            Self::Core(_) | Self::Io(_) | Self::CompareFailed { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
