use sfde_core::SfdeError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Invalid or unreadable configuration; reported before any simulation.
    #[error("configuration error in `{field}`: {message}")]
    Config { field: String, message: String },
    /// Failure while an experiment was running (e.g. a diverging path).
    #[error("experiment failed: {0}")]
    Run(#[from] SfdeError),
    #[error("cannot write output: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { field: field.into(), message: message.into() }
    }

    /// Process exit code: 2 for configuration problems, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            _ => 1,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(std::io::Error::other(e))
    }
}
