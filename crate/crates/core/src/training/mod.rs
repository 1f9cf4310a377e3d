//! Rate-distortion training, learning-rate schedule and experiment harnesses.

pub mod config;
pub mod data;
pub mod loss;
pub mod schedule;
pub mod sweep;
pub mod train;

pub use config::TrainConfig;
pub use loss::{evaluate_loss, loss_var, LossConfig, LossParts, Metric};
pub use schedule::PlateauSchedule;
pub use train::{train, train_step, TrainOutcome};
