use structmeta::Error;

/// Process exit status for a successful run.
pub const EXIT_OK: i32 = 0;
/// Unexpected internal failure.
pub const EXIT_INTERNAL: i32 = 1;
/// Bad config file, flags or model/database mismatch.
pub const EXIT_CONFIG: i32 = 2;
/// Missing, unreadable or malformed input data.
pub const EXIT_DATA: i32 = 3;
/// Training diverged or produced non-finite values.
pub const EXIT_NUMERICAL: i32 = 4;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Core(e) => match e.root() {
                Error::Numerical(_) | Error::Divergence { .. } => EXIT_NUMERICAL,
                Error::Io(_) | Error::Format(_) | Error::Split(_) => EXIT_DATA,
                Error::Spec(_) | Error::Shape { .. } | Error::Precondition(_) => EXIT_CONFIG,
                _ => EXIT_INTERNAL,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
