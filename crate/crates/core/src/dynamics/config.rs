use serde::{Deserialize, Serialize};

/// Layer sizes of the factored dynamics network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    /// Hidden sizes of each per-input feature extractor; the last one is the feature width.
    pub extractor_hidden: Vec<usize>,
    pub heads: usize,
    /// Key/query/value size per head.
    pub head_dim: usize,
    /// Output projection width of each attention module.
    pub attn_out: usize,
    /// MLP after each attention module.
    pub post_attn: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            extractor_hidden: vec![64, 64],
            heads: 4,
            head_dim: 16,
            attn_out: 64,
            post_attn: vec![64, 64],
        }
    }
}

impl ArchConfig {
    pub fn feature_dim(&self) -> usize {
        *self.extractor_hidden.last().expect("at least one extractor layer")
    }

    pub fn token_dim(&self) -> usize {
        *self.post_attn.last().expect("at least one post-attention layer")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.extractor_hidden.is_empty() || self.post_attn.is_empty() {
            return Err("extractor and post-attention MLPs need at least one layer".into());
        }
        if self.extractor_hidden.iter().chain(&self.post_attn).any(|&s| s == 0)
            || self.heads == 0
            || self.head_dim == 0
            || self.attn_out == 0
        {
            return Err("layer sizes must be positive".into());
        }
        Ok(())
    }
}

/// Training hyperparameters of one dynamics learner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicsConfig {
    /// Jacobian-penalty coefficient.
    pub lambda: f64,
    /// Batch index where the penalty starts ramping in.
    pub anneal_start: u64,
    /// Batch index where the penalty reaches `lambda`.
    pub anneal_end: u64,
    /// Beta(α, α) parameter for Mixup; `None` disables Mixup.
    pub mixup_alpha: Option<f64>,
    pub lr: f64,
    pub batch_size: usize,
    /// Prioritisation exponent; `None` samples uniformly.
    pub priority_exponent: Option<f64>,
    /// Probability of zeroing one input feature per sample (masked-model training).
    pub feature_dropout: f64,
    pub buffer_capacity: usize,
    pub arch: ArchConfig,
}

impl Default for DynamicsConfig {
    /// Detection-benchmark defaults.
    fn default() -> Self {
        Self {
            lambda: 1e-3,
            anneal_start: 50_000,
            anneal_end: 100_000,
            mixup_alpha: Some(1.0),
            lr: 3e-4,
            batch_size: 32,
            priority_exponent: Some(0.5),
            feature_dropout: 0.0,
            buffer_capacity: super::TransitionStore::DEFAULT_CAPACITY,
            arch: ArchConfig::default(),
        }
    }
}

impl DynamicsConfig {
    /// Online (exploration) defaults.
    pub fn rl() -> Self {
        Self {
            mixup_alpha: Some(0.1),
            lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.lambda >= 0.0) {
            return Err(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if self.anneal_start > self.anneal_end {
            return Err("anneal_start must not exceed anneal_end".into());
        }
        if let Some(a) = self.mixup_alpha {
            if !(a > 0.0) {
                return Err(format!("mixup alpha must be > 0, got {a}"));
            }
        }
        if !(self.lr > 0.0) || self.batch_size == 0 || self.buffer_capacity == 0 {
            return Err("lr, batch_size and buffer_capacity must be positive".into());
        }
        if let Some(e) = self.priority_exponent {
            if !(e >= 0.0) {
                return Err(format!("priority exponent must be >= 0, got {e}"));
            }
        }
        if !(0.0..=1.0).contains(&self.feature_dropout) {
            return Err("feature_dropout must lie in [0, 1]".into());
        }
        self.arch.validate()
    }

    /// Effective penalty weight: `λ · clamp((t − start)/(end − start), 0, 1)`.
    pub fn lambda_at(&self, batch_index: u64) -> f64 {
        lambda_schedule(self.lambda, self.anneal_start, self.anneal_end, batch_index)
    }
}

pub fn lambda_schedule(lambda: f64, start: u64, end: u64, t: u64) -> f64 {
    if t < start {
        return 0.0;
    }
    if t >= end {
        return lambda;
    }
    lambda * (t - start) as f64 / (end - start) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(lambda_schedule(1e-3, 50, 100, 10), 0.0);
        assert_eq!(lambda_schedule(1e-3, 50, 100, 50), 0.0);
        assert_eq!(lambda_schedule(1e-3, 50, 100, 100), 1e-3);
        assert_eq!(lambda_schedule(1e-3, 50, 100, 10_000), 1e-3);
        assert!((lambda_schedule(1e-3, 50, 100, 75) - 5e-4).abs() < 1e-18);
        // degenerate ramp is a step at `start`
        assert_eq!(lambda_schedule(2.0, 5, 5, 4), 0.0);
        assert_eq!(lambda_schedule(2.0, 5, 5, 5), 2.0);
    }

    #[test]
    fn validation() {
        assert!(DynamicsConfig::default().validate().is_ok());
        let bad = DynamicsConfig {
            anneal_start: 10,
            anneal_end: 5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DynamicsConfig {
            lambda: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = DynamicsConfig {
            mixup_alpha: Some(0.0),
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
