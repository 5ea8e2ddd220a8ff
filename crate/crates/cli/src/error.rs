use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Malformed or inconsistent run configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// Missing files, unreadable data, invalid model documents.
    #[error("input error: {0}")]
    Input(String),

    #[error("{0}")]
    Divergence(String),

    /// One or more verification checks missed their tolerance.
    #[error("verification failed: {}", .0.join(", "))]
    Verify(Vec<String>),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Divergence(_) => 3,
            CliError::Verify(_) => 1,
        }
    }
}

impl From<fairrobust::Error> for CliError {
    fn from(e: fairrobust::Error) -> Self {
        use fairrobust::Error as E;
        match e {
            E::Divergence { .. } => CliError::Divergence(e.to_string()),
            E::Io(io) => CliError::Io(io),
            E::Ingestion { .. } | E::Document(_) => CliError::Input(e.to_string()),
            E::Parameter(_) | E::Domain(_) | E::Dimension { .. } | E::Report(_) => CliError::Config(e.to_string()),
        }
    }
}
