use nsf_core::NsfError;
use thiserror::Error;

/// Process exit codes.
pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_IO: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Core(#[from] NsfError),
}

impl CliError {
    /// Unreadable or malformed files map to the I/O code, invalid arguments
    /// and settings to the usage code, and non-finite or diverging
    /// computations to the numeric code.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                NsfError::Io { .. }
                | NsfError::Wav { .. }
                | NsfError::F0Parse { .. }
                | NsfError::FeatureParse { .. }
                | NsfError::ConfigFile { .. }
                | NsfError::Checkpoint(_) => EXIT_IO,
                NsfError::Config(_) | NsfError::InvalidInput(_) | NsfError::LengthMismatch { .. } => {
                    EXIT_USAGE
                }
                NsfError::SilentInput | NsfError::Diverged { .. } | NsfError::DetachedGraph => {
                    EXIT_NUMERIC
                }
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Fails with a numeric error unless every value is finite.
pub fn ensure_finite(what: &str, values: &[f64]) -> CliResult<()> {
    match values.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(CliError::Numeric(format!(
            "{what} is not finite at index {i} ({})",
            values[i]
        ))),
    }
}
