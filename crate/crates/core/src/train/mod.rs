//! Training loop: hard-example sampling, augmentation, SGD with momentum,
//! periodic validation and checkpoints, best-model selection.
//!
//! Iteration `i` (counted from 0) draws from `ChaCha8Rng` seeded with the
//! run seed on stream `i`: first the batch indices, then four variates per
//! sample for augmentation. Nothing else consumes randomness, so resuming
//! at any iteration replays the same batches.

mod augment;
mod checkpoint;
mod sampling;
mod trainer;

use thiserror::Error;

pub use augment::{augment_sample, flip_horizontal, flip_vertical, rotate_quarters, scale, AugmentConfig};
pub use checkpoint::{CheckpointError, CheckpointRecord, FORMAT_VERSION, MAGIC};
pub use sampling::{sample_batch, HardMiningConfig, Sampler};
pub use trainer::{
    checkpoint_path, evaluate_dataset, model_from_record, selection_iou, stack_batch, train, TrainConfig, TrainHistory,
    TrainOutcome, Trainer, BEST_CHECKPOINT,
};

use crate::arch::ConfigError;
use crate::eval::EvalError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("sample {sample} has tag {tag:?}, which has no hard-mining weight")]
    UnknownTag { sample: String, tag: String },
    #[error("{0} dataset is empty")]
    EmptyDataset(&'static str),
    #[error("loss became {loss} at iteration {iteration}")]
    NonFiniteLoss { iteration: u64, loss: f32 },
    #[error(transparent)]
    Model(#[from] ConfigError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}
