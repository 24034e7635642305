//! Optimiser, learning-rate schedule, data preparation and the train/eval
//! loops.

pub mod dataset;
pub mod optim;
pub mod runner;
pub mod schedule;

pub use dataset::{preprocess, Dataset, Example};
pub use optim::Sgd;
pub use runner::{
    batch_gradient, evaluate, format_metrics, parse_metrics, train, BatchGradient, EpochMetrics,
    Evaluation, TrainReport, BEST_CHECKPOINT, FINAL_CHECKPOINT, METRICS_FILE,
};
pub use schedule::{lr_at, TrainRunConfig, RUN_SCHEMA_VERSION};
