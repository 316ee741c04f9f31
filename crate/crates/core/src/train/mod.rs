//! Splitting, optimizer selection, the training loop and weight files.

mod checkpoint;
mod config;
mod data;
mod optim;
mod split;
mod trainer;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use config::{
    select_optimizer, OptimizerConfig, OptimizerKind, TrainConfig, TrainOverrides, CONFIG_SCHEMA_VERSION, DEFAULT_BATCH_SIZE,
    DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE,
};
pub use data::{build_patch_store, load_patch_store, PatchSet, PatchStore};
pub use optim::Optimizer;
pub use split::{make_splits, split_sizes, SplitAssignment, SplitPart, DEFAULT_RATIOS};
pub use trainer::{evaluate_set, history_csv, predict_set, train, train_on, train_with, EpochMetrics, SetEvaluation, TrainingRun};
