//! Losses, optimization and the training loops.

pub mod losses;
pub mod optim;
pub mod trainer;

pub use losses::{ar_loss, mask_count, nar_loss, nar_loss_with_masks, sample_condition, sample_mask};
pub use optim::{lr_factor, Adam};
pub use trainer::{
    init_transfer, param_partition, pretrain, transfer, EpochRecord, ModelInit, PromptSettings,
    TokenDataset, TrainConfig, TrainOutput, TransferMode,
};
