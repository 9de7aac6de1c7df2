use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("input error: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Core(#[from] dbmt_core::Error),
}

impl CliError {
    /// 2 for bad input, 1 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        use dbmt_core::Error as E;
        match self {
            CliError::Input(_) | CliError::Io(_) => 2,
            CliError::Core(E::InvalidParameter(_) | E::DimensionMismatch(_)) => 2,
            CliError::Core(_) => 1,
        }
    }
}
