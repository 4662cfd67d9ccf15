use thiserror::Error;

/// Errors surfaced by the library. The CLI maps these onto process exit
/// codes: config 2, dataset 3, numeric 4, I/O 5.
#[derive(Error, Debug)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate triangle: {0}")]
    DegenerateTriangle(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dataset invalid [{code}]: {msg}")]
    Dataset { code: &'static str, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
}

impl Error {
    pub fn dataset(code: &'static str, msg: impl Into<String>) -> Self {
        Error::Dataset {
            code,
            msg: msg.into(),
        }
    }

    /// Process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Dataset { .. } => 3,
            Error::Numeric(_) => 4,
            Error::Io(_) | Error::Image(_) | Error::Checkpoint(_) => 5,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
