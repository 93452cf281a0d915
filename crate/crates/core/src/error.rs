use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("mode error: {0}")]
    Mode(String),

    #[error("sequence too long: {len} tokens exceeds the maximum of {max}")]
    Length { len: usize, max: usize },

    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocab { id: u32, size: usize },

    #[error("{dim} index {index} out of range (must be < {len})")]
    Bounds {
        dim: &'static str,
        index: usize,
        len: usize,
    },

    #[error("insufficient length: {0}")]
    InsufficientLength(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("model file format error: {0}")]
    Format(String),

    #[error("model data error: {0}")]
    Data(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable code used in API error bodies.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape_error",
            Error::Domain(_) => "domain_error",
            Error::Input(_) => "invalid_input",
            Error::Mode(_) => "mode_error",
            Error::Length { .. } => "too_long",
            Error::Vocab { .. } => "vocab_error",
            Error::Bounds { .. } => "out_of_range",
            Error::InsufficientLength(_) => "insufficient_length",
            Error::Config(_) => "invalid_config",
            Error::Format(_) => "format_error",
            Error::Data(_) => "data_error",
            Error::Io(_) => "io_error",
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
