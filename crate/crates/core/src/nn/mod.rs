//! Dense float64 neural-network kernel with hand-written backward passes,
//! sized for training small SE-ResNet classifiers on a CPU.
//!
//! Layers keep their parameters as [`Param`]s. A forward pass in training
//! mode returns a cache that the matching backward pass consumes; backward
//! passes add into the parameter gradients, so call
//! [`SeResNet::zero_grad`] between steps.

pub mod checkpoint;
pub mod gradcheck;
mod layers;
mod model;
mod optim;
mod train;

pub use layers::{
    global_avg_pool, global_avg_pool_backward, relu, relu_backward, sigmoid, BatchNorm1d, BnCache,
    Conv1d, Dense, Param, SeBlock, SeCache, Slot, TensorKind, Visit,
};
pub use model::{BlockCache, ForwardTrace, Mode, ResidualBlock, SeResNet, SeResNetConfig};
pub use optim::{Adam, AdamConfig, LrSchedule};
pub use train::{
    exact_match_accuracy, predict_probs, stack_inputs, train, EpochRecord, History, LossKind,
    TrainConfig,
};
