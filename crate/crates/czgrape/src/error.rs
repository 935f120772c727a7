use czgrape_core::Error as CoreError;

/// Failure of a command, carrying the process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("fit failed: {0}")]
    Fit(String),
    #[error("replay mismatch: {0}")]
    Replay(String),
    #[error("{0}")]
    Run(CoreError),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Fit(_) => 3,
            CliError::Replay(_) => 4,
            CliError::Run(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::InvalidConfig(m) => CliError::Config(m),
            CoreError::OutOfRange(_) | CoreError::NonDivisibleDuration { .. } => CliError::Config(e.to_string()),
            CoreError::FitFailure(m) => CliError::Fit(m),
            CoreError::MissingFit(m) => CliError::Fit(format!("missing {m} fit")),
            other => CliError::Run(other),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
