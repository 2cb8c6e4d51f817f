use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// The experiment description is unusable; one message per problem.
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),
    #[error("{0}")]
    Runtime(String),
    #[error("{path}: line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) | CliError::Parse { .. } => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<photogeo_core::Error> for CliError {
    fn from(e: photogeo_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
