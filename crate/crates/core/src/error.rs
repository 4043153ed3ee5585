use alloc::string::String;

/// Errors surfaced by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// An argument violated an operation precondition.
    #[error("parameter error: {0}")]
    Parameter(String),
    /// Shapes or graph usage violated the differentiation contract.
    #[error("contract error: {0}")]
    Contract(String),
    /// A required input (checkpoint, dataset) was missing or inconsistent.
    #[error("configuration error: {0}")]
    Config(String),
    /// A numerical abort, e.g. a NaN loss during training.
    #[error("numerical abort: {0}")]
    Numerical(String),
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! bail {
    ($kind:ident, $($arg:tt)*) => {
        return Err($crate::Error::$kind(alloc::format!($($arg)*)))
    };
}
pub(crate) use bail;
