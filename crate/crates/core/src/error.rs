use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box ({x0}, {y0}, {x1}, {y1}): {reason}")]
    InvalidBox {
        x0: f32,
        y0: f32,
        x1: f32,
        y1: f32,
        reason: &'static str,
    },

    #[error("shape mismatch: {context} expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("input size {got} not divisible by {required} (needed for {context})")]
    Indivisible {
        got: usize,
        required: usize,
        context: &'static str,
    },

    #[error("non-finite value in loss term `{0}`")]
    NonFiniteLoss(&'static str),

    #[error("config parse error at {file}:{line}: {message}")]
    ConfigParse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn invalid_arg(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
