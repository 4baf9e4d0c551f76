//! Exploration through local dependency graphs.

pub mod depgraph;
pub mod dynamics;
pub mod envs;
pub mod explore;
pub mod factored;
pub mod harness;
pub mod ppo;
pub mod scalar;
pub mod seed;
pub mod tensorcore;

pub use scalar::Scalar;

pub type Tensor64 = tensorcore::Tensor<f64>;
pub type Tensor32 = tensorcore::Tensor<f32>;
pub type DynamicsModel64 = dynamics::DynamicsModel<f64>;
pub type DynamicsModel32 = dynamics::DynamicsModel<f32>;
pub type Learner64 = dynamics::Learner<f64>;
pub type Ensemble64 = explore::DynamicsEnsemble<f64>;
pub type Ensemble32 = explore::DynamicsEnsemble<f32>;
