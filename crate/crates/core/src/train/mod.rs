//! Freeze plans, optimizer, metrics, synthetic data and the training loop.

pub mod freeze;
pub mod metrics;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use freeze::{apply_freeze, FreezeMode, FreezePlan};
pub use metrics::{argmax, uar_war, Metrics};
pub use optim::{adamw_step, cosine_lr, AdamW, AdamWParams, Moments};
pub use synth::{synth_dataset, Dataset, SynthSpec};
pub use trainer::{evaluate, predict, train, EpochRecord, MetricsReport, TrainConfig, TrainOutcome};
