use std::io;

/// Errors produced by the super-resolution pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input too small or empty for the requested operation.
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    /// Two arrays that must be congruent are not.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// A parameter is outside its admissible range.
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    /// Training produced a non-finite loss or parameter.
    #[error("training diverged at epoch {epoch}, batch {batch}: {reason}")]
    DivergenceDetected {
        epoch: usize,
        batch: usize,
        reason: String,
    },
    /// A model or dataset container could not be decoded.
    #[error("malformed {what}: {reason}")]
    Format { what: &'static str, reason: String },
    #[error("image codec error: {0}")]
    Image(#[from] image::ImageError),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
