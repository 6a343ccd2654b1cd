use tanet_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("input spatial dims {h}x{w} must be divisible by the {ph}x{pw} patch")]
    PatchDivisibility {
        h: usize,
        w: usize,
        ph: usize,
        pw: usize,
    },

    #[error("expected a 3-channel [B,3,H,W] input, got shape {0:?}")]
    InputShape(Vec<usize>),

    #[error("unknown parameter {0}")]
    UnknownParam(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
