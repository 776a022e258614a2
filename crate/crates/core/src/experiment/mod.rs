//! Optimizers, the training loop with checkpoint selection, fold plans and
//! cross-validation drivers.

mod cv;
mod folds;
mod optim;
mod train;

pub use cv::{run_kfold_train, run_nested_cv, run_splits, summarize, MetricsSummary};
pub use folds::{assign_folds, CvMode, FoldPlan, Split};
pub use optim::{adam_step, Adam, AdamConfig, MomentState, OptimizerKind};
pub use train::{early_stop_epoch, should_stop, train_fold, Batch, Checkpoint, EpochRecord, SurvivalModel, TrainConfig};
