use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("gradient for parameter {0} is not finite; aborting")]
    NanGradient(String),

    #[error("loss became non-finite ({loss}) at step {step}; last checkpoint retained")]
    NonFiniteLoss { loss: f64, step: u64 },

    #[error("training dataset is empty")]
    EmptyDataset,

    #[error("pair {name}: hr {hr:?} is not lr {lr:?} scaled by {scale}")]
    ScaleMismatch {
        name: String,
        hr: Vec<usize>,
        lr: Vec<usize>,
        scale: usize,
    },

    #[error("train state: {0}")]
    State(String),

    #[error(transparent)]
    Model(#[from] tanet_model::ModelError),

    #[error(transparent)]
    Tensor(#[from] tanet_tensor::TensorError),

    #[error(transparent)]
    Metrics(#[from] tanet_metrics::MetricsError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
