use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("expected a single-channel image, got {0} channels")]
    MultiChannel(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("box out of bounds: {0}")]
    BoxOutOfBounds(String),

    #[error("foreground and background boxes overlap")]
    OverlappingBoxes,

    #[error("non-finite value encountered: {0}")]
    Divergence(String),

    #[error("model format: {0}")]
    Format(String),

    #[error("image codec: {0}")]
    Codec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(what: &str, a: (usize, usize), b: (usize, usize)) -> Error {
    Error::Shape(format!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1))
}
