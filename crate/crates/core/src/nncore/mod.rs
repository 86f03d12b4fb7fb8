//! The feed-forward network, its gradients, and the optimizers that train it.

pub mod checkpoint;
pub mod model;
pub mod network;
pub mod optim;
pub mod train;

pub use model::{DifferentiableLoss, NetworkLoss};
pub use network::{forward, loss_and_gradient, Evaluator, LossKind, LossValue, NetworkParams, TOY_WIDTHS};
pub use optim::{
    adam_step, sam_step, sam_update, sgd_momentum_step, BaseOptimizer, OptimizerConfig, OptimizerKind, OptimizerState,
};
pub use train::Trainer;
