use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Operand shapes are incompatible.
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    /// An argument is malformed (bad axis, non-permutation, ...).
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A layer or model configuration is inconsistent.
    #[error("configuration error: {0}")]
    Config(String),

    /// The input tensor does not satisfy a model's preconditions.
    #[error("input error: {0}")]
    Input(String),

    /// A serialized file is malformed.
    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// The finite-difference oracle could not produce a value.
    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }
}
