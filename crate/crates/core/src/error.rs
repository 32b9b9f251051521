use thiserror::Error;

/// Errors raised anywhere in the optimization stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid state: {0}")]
    State(String),

    #[error("rejected validation input: {0}")]
    ValidationInput(String),

    #[error("unknown problem `{0}`")]
    NotFound(String),

    #[error("error blurriness undefined: all component weights are zero")]
    UndefinedRatio,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("validator protocol failure: {0}")]
    Protocol(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension {
            context,
            expected,
            found,
        })
    }
}
