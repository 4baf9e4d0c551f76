//! Proximal policy optimisation with generalised advantage estimation.

mod gae;
mod net;
mod rollout;
mod update;

pub use gae::{gae, normalize_advantages};
pub use net::{flatten_state, PolicyValueNet};
pub use rollout::{collect_rollouts, EnvPool, EpisodeStats, RolloutBatch};
pub use update::{ppo_update, PpoAgent, UpdateStats};

use crate::dynamics::DynamicsError;
use crate::envs::EnvError;
use crate::tensorcore::TensorError;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PpoError {
    #[error("environment {env}: {source}")]
    Env {
        env: usize,
        #[source]
        source: EnvError,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("intrinsic reward: {0}")]
    Intrinsic(#[from] DynamicsError),
    #[error("invalid PPO config: {0}")]
    Config(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoConfig {
    pub lr: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub minibatch: usize,
    pub epochs: usize,
    pub value_coef: f64,
    pub entropy_coef: f64,
    /// Clip value predictions around the collecting values by `clip`.
    pub clip_value: bool,
    pub hidden: Vec<usize>,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            clip: 0.1,
            gae_lambda: 0.98,
            gamma: 0.99,
            minibatch: 32,
            epochs: 10,
            value_coef: 0.5,
            entropy_coef: 0.0,
            clip_value: false,
            hidden: vec![128, 128],
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(format!("clip must lie in (0, 1), got {}", self.clip));
        }
        if !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0) || !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err("gamma and GAE lambda must lie in (0, 1]".into());
        }
        if !(self.lr > 0.0) || self.minibatch == 0 || self.epochs == 0 {
            return Err("lr, minibatch and epochs must be positive".into());
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err("hidden sizes must be non-empty and positive".into());
        }
        if !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return Err("loss coefficients must be >= 0".into());
        }
        Ok(())
    }
}
