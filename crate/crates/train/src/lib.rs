//! Training harness: L1 objective, bias-corrected Adam, the halving
//! learning-rate schedule, dihedral data augmentation, and a
//! bit-deterministic epoch loop with per-epoch checkpoints.

mod adam;
mod augment;
mod error;
mod loss;
mod schedule;
mod trainer;

pub use adam::{adam_step, AdamState};
pub use augment::{apply_dihedral, augment_pair, DihedralVariant};
pub use error::TrainError;
pub use loss::l1_loss;
pub use schedule::TrainSchedule;
pub use trainer::{
    load_train_state, save_train_state, train, LossRecord, TrainDataset, TrainOptions,
    TrainOutcome, TrainPair, TrainState,
};

pub type Result<T> = std::result::Result<T, TrainError>;
