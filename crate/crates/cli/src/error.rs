use thiserror::Error;

/// Failure classes with stable exit codes.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numerical(String),
    #[error("{0}")]
    Sizing(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Sizing(_) => 4,
        }
    }

    /// Classifies a library error, prefixing `context` to its message.
    pub fn from_lib(context: &str, e: orthoinfer::Error) -> Self {
        let msg = if context.is_empty() {
            e.to_string()
        } else {
            format!("{context}: {e}")
        };
        match e {
            orthoinfer::Error::TooManyCandidates { .. } => CliError::Sizing(msg),
            _ if e.is_numerical() => CliError::Numerical(msg),
            _ => CliError::Input(msg),
        }
    }
}

impl From<orthoinfer::Error> for CliError {
    fn from(e: orthoinfer::Error) -> Self {
        Self::from_lib("", e)
    }
}
