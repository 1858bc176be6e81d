//! The field regressor: architecture, losses, gradients and training.

pub mod config;
pub mod loss;
pub mod network;
pub mod params;
pub mod tensor;
pub mod train;

pub use config::NetworkConfig;
pub use loss::{loss_reg, loss_smo, loss_total, LossBreakdown, DEFAULT_LAMBDA_SMO};
pub use network::{backward, forward, Weights};
pub use params::{Gradients, NetworkParams};
pub use train::{train, TrainOptions, TrainOutcome};
