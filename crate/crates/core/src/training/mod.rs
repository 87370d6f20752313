//! Cross-pseudo-supervised training of two networks.

mod adam;
pub mod checkpoint;
mod loss;
mod trainer;

pub use adam::{clip_grad_norm, Adam, AdamConfig};
pub use checkpoint::{decode_state, encode_state};
pub use loss::{
    build_targets, consistency_loss, pseudo_label_targets, supervised_loss, supervised_targets, total_loss,
    TargetKind, TargetLayout,
};
pub use trainer::{
    train, train_epoch, validation_ndcg10, DualTrainerState, NetworkScorer, StepLog, TrainConfig, TrainExample,
    TrainOutcome, TrainingData, ValidationExample,
};
