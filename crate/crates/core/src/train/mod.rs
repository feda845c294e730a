//! Optimization, evaluation metrics and checkpoints.

pub mod checkpoint;
pub mod metrics;
pub mod optim;
pub mod trainer;

pub use checkpoint::{Checkpoint, CheckpointHeader};
pub use metrics::{evaluate, forecast, metrics, persistence, Evaluation, MetricsReport};
pub use optim::{lr_at_epoch, Adam};
pub use trainer::{fit_and_test, EpochRecord, StepRecord, TrainConfig, TrainObserver, TrainOutcome, Trainer};
