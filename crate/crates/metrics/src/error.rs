use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("invalid image: {0}")]
    InvalidImage(String),

    #[error("{path}: {reason}")]
    Decode { path: String, reason: String },

    #[error("{path}: unsupported color type {color:?} (8/16-bit RGB or grayscale PNG only)")]
    UnsupportedColor { path: String, color: String },

    #[error("resize would produce an empty image ({0}x{1})")]
    EmptyResize(usize, usize),

    #[error("image {0}x{1} is smaller than the {2}x{2} SSIM window")]
    TooSmallForWindow(usize, usize, usize),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
