//! Optimizer, schedule, clipping and the staged training loop.

pub mod config;
pub mod optim;
pub mod schedule;
pub mod trainer;

pub use config::TrainConfig;
pub use optim::{adam_step, clip_gradients, global_norm, AdamConfig, AdamState, Grads};
pub use schedule::{cosine_annealing, cosine_warm_restart_lr, restart_position};
pub use trainer::{
    epoch_order, train_network, validate, EvalPoint, Lambdas, LogEntry, LossSummary, StageData,
    StageSpec, TrainOutcome,
};
