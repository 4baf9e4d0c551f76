//! Factored dynamics model, its training loop and replay storage.

mod buffer;
mod config;
mod encode;
mod loss;
mod model;
mod train;

pub use buffer::{PrioritizedBuffer, PrioritySampler, TransitionStore};
pub use config::{lambda_schedule, ArchConfig, DynamicsConfig};
pub use encode::{encode, encode_batch, encode_states, mixup_batch, mixup_with, EncodedBatch};
pub use loss::{
    jacobian_penalty, log_likelihoods, nll_from, nll_loss, penalty_from, per_record_nll, underflow_count, PROB_FLOOR,
};
pub use model::{DynamicsModel, ForwardOut, HeadOutput, PassCounters, Prediction};
pub use train::{Learner, LossComponents, TrainIncidents};

use crate::factored::SchemaError;
use crate::tensorcore::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite values in {layer}")]
    NonFinite { layer: String },
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch of {0} is too small for mixup")]
    BatchTooSmall(usize),
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("invalid configuration: {0}")]
    Config(String),
}
