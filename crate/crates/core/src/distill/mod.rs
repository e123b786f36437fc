//! Distillation losses, the Adam optimizer and the training loops.

mod adam;
mod logits;
mod loss;
mod train;

pub use adam::{AdamConfig, AdamState};
pub use logits::LogitsTable;
pub use loss::{distill_loss, hard_loss, soft_loss, SampleObjective, SoftMode, PROB_CLAMP};
pub use train::{
    accuracy_and_loss, distill, objective_and_grads, train_teacher, BatchItem, DistillConfig, EpochRecord,
    Objective, Teacher, TrainConfig, TrainReport,
};
