use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("range error: {0}")]
    Range(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("parameters infeasible: {0}")]
    Infeasible(String),

    #[error("constant search exhausted after k0 = {last_k0}: first violated condition `{condition}`")]
    SearchExhausted { last_k0: u64, condition: String },

    #[error("model inconsistency: {0}")]
    Model(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("coefficient bound violated at l = {index}: {entry}")]
    BoundViolation { index: usize, entry: String },

    #[error("index {k} outside the stored range 0..={max}")]
    OutOfRange { k: usize, max: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
