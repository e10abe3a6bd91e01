use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no decay to fit")]
    NoDecay,

    #[error("numerical blow-up in {context}: {detail}")]
    NumericalBlowUp { context: &'static str, detail: String },

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("infeasible scenario: {0}")]
    Infeasible(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("unknown scheme `{0}`")]
    UnknownScheme(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
