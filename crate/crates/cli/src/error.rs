use dicke::DickeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Compute(#[from] DickeError),

    #[error("I/O error: {0}")]
    Io(String),

    #[error("cache error: {0}")]
    Cache(String),
}

impl CliError {
    pub fn io(context: impl std::fmt::Display, e: std::io::Error) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }

    /// 2 configuration, 3 convergence or numerical failure, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) | CliError::Cache(_) => 4,
            CliError::Compute(e) => match e {
                DickeError::InvalidParams(_)
                | DickeError::InvalidInput(_)
                | DickeError::UnknownObservable(_)
                | DickeError::UnknownSolver(_)
                | DickeError::DimensionLimit { .. } => 2,
                DickeError::Storage(_) => 4,
                _ => 3,
            },
        }
    }
}
