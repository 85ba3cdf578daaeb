use diffsketch::data::DataError;
use thiserror::Error;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or conflicting arguments. Exit code 2.
    #[error("usage: {0}")]
    Usage(String),
    /// Anything that went wrong while running. Exit code 3.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

macro_rules! runtime_from {
    ($($t:ty),*) => {
        $(impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                CliError::Runtime(e.to_string())
            }
        })*
    };
}

runtime_from!(
    diffsketch::Error,
    DataError,
    std::io::Error,
    serde_json::Error,
    csv::Error,
    rayon::ThreadPoolBuildError
);
