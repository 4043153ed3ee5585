use std::path::Path;

/// Failures of a CLI command, grouped by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad or inconsistent configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    /// Missing, malformed or mismatched files; exit code 3.
    #[error("data error: {0}")]
    Data(String),
    /// Non-finite values during training or optimisation; exit code 4.
    #[error("numerical abort: {0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
        }
    }

    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Data(format!("{}: {err}", path.display()))
    }

    pub(crate) fn data_at(path: &Path, msg: impl std::fmt::Display) -> Self {
        CliError::Data(format!("{}: {msg}", path.display()))
    }
}

impl From<mvboost_core::Error> for CliError {
    fn from(e: mvboost_core::Error) -> Self {
        use mvboost_core::Error as E;
        match e {
            E::Parameter(m) | E::Config(m) => CliError::Config(m),
            E::Contract(m) => CliError::Data(m),
            E::Numerical(m) => CliError::Numerical(m),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

