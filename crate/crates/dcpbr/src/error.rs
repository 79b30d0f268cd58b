//! Error type shared across the crate.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A tensor operation received incompatible shapes. `detail` names the
    /// offending dimension.
    #[error("shape mismatch in `{op}`: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// Invalid experiment or network configuration.
    #[error("configuration error: {0}")]
    Config(String),

    /// A referenced input file does not exist.
    #[error("missing input file: {0}")]
    MissingFile(PathBuf),

    /// A forward or backward pass produced a non-finite value.
    #[error("numerical abort: {0}")]
    NonFinite(String),

    /// Elementwise division hit a denominator below the 1e-12 guard.
    #[error("numerical abort: division by near-zero denominator (|d| = {magnitude:.3e} at element {index})")]
    DivisionNearZero { magnitude: f64, index: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("image error: {0}")]
    Image(#[from] image::ImageError),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for configuration problems,
    /// 3 for numerical aborts, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::MissingFile(_) | Error::Json(_) => 2,
            Error::NonFinite(_) | Error::DivisionNearZero { .. } => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
