use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Error, Debug)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: String, detail: String },

    #[error("invalid argument for {op}: {detail}")]
    Invalid { op: String, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn shape(op: &str, detail: impl Into<String>) -> Self {
        Error::Shape { op: op.to_string(), detail: detail.into() }
    }

    pub fn invalid(op: &str, detail: impl Into<String>) -> Self {
        Error::Invalid { op: op.to_string(), detail: detail.into() }
    }
}
