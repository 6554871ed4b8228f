//! Two-stage trainer, cross-entropy baseline, optimizer and checkpoints.

mod checkpoint;
mod metrics;
mod model;
mod sgd;
mod train;

pub use checkpoint::{Checkpoint, Metadata, TensorRecord, MAGIC, VERSION};
pub use metrics::{metrics_csv, write_metrics_csv, MetricRow, METRICS_HEADER};
pub use model::{load_checkpoint, save_checkpoint, LinearHead, Model, HEAD_PREFIX};
pub use sgd::Sgd;
pub use train::{
    evaluate, resume_stage1, train_ce_baseline, train_stage1, train_stage2, TrainConfig, TrainOutcome, TrainStage,
};
