//! Dynamics ensembles and intrinsic rewards.
//!
//! All rewards are computed from a frozen ensemble on collected
//! transitions; the realized next state is needed for graph extraction and
//! curiosity.

use crate::depgraph::{jacobian_scores, DEFAULT_EPSILON};
use crate::dynamics::{
    encode_batch, per_record_nll, DynamicsConfig, DynamicsError, Learner, LossComponents, Prediction, TransitionStore,
};
use crate::factored::{EdgeMask, FactorSchema, TransitionRecord};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Transitions scored per tape, bounding memory.
const CHUNK: usize = 256;

/// `M` learners trained on one shared store.
#[derive(Clone, Debug)]
pub struct DynamicsEnsemble<T> {
    pub members: Vec<Learner<T>>,
    pub store: TransitionStore,
}

impl<T: Scalar> DynamicsEnsemble<T> {
    /// Member `k` is initialised from `derive_seed(seed, "member", k)`.
    pub fn new(schema: &FactorSchema, config: &DynamicsConfig, m: usize, seed: u64) -> Result<Self, DynamicsError> {
        if m == 0 {
            return Err(DynamicsError::Config("ensemble needs at least one member".into()));
        }
        let members = (0..m)
            .map(|k| Learner::new(schema.clone(), config.clone(), derive_seed(seed, "member", k as u64)))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            members,
            store: TransitionStore::new(config.buffer_capacity),
        })
    }

    /// Ensemble of given learners with an empty store.
    pub fn from_members(members: Vec<Learner<T>>) -> Self {
        let cap = members[0].config().buffer_capacity;
        Self {
            members,
            store: TransitionStore::new(cap),
        }
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn schema(&self) -> &FactorSchema {
        self.members[0].model.schema()
    }

    pub fn push(&mut self, record: TransitionRecord) {
        let slot = self.store.push(record);
        for m in &mut self.members {
            m.on_insert(slot);
        }
    }

    /// One batch per member, each drawn through its own sampler.
    pub fn train_step(&mut self) -> Result<Vec<LossComponents>, DynamicsError> {
        let store = &self.store;
        self.members.iter_mut().map(|m| m.train_step(store)).collect()
    }
}

/// Which intrinsic reward drives exploration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntrinsicKind {
    Elden,
    Disagreement,
    Curiosity,
    Cai,
    None,
}

impl IntrinsicKind {
    pub fn name(&self) -> &'static str {
        match self {
            IntrinsicKind::Elden => "elden",
            IntrinsicKind::Disagreement => "disagreement",
            IntrinsicKind::Curiosity => "curiosity",
            IntrinsicKind::Cai => "cai",
            IntrinsicKind::None => "none",
        }
    }

    /// Whether the kind needs a trained ensemble.
    pub fn uses_ensemble(&self) -> bool {
        *self != IntrinsicKind::None
    }
}

impl fmt::Display for IntrinsicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IntrinsicKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "elden" => IntrinsicKind::Elden,
            "disagreement" => IntrinsicKind::Disagreement,
            "curiosity" => IntrinsicKind::Curiosity,
            "cai" => IntrinsicKind::Cai,
            "none" => IntrinsicKind::None,
            other => return Err(format!("unknown intrinsic reward {other:?}")),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub kind: IntrinsicKind,
    pub beta: f64,
    pub epsilon: f64,
    /// Use the variance of raw derivative scores instead of binary edges.
    pub continuous_variance: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            kind: IntrinsicKind::Elden,
            beta: 1.0,
            epsilon: DEFAULT_EPSILON,
            continuous_variance: false,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(format!("beta must be a finite value >= 0, got {}", self.beta));
        }
        if !(self.epsilon >= 0.0) {
            return Err(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// `r_task + β · r_intrinsic`.
pub fn combine(task: f64, intrinsic: f64, beta: f64) -> f64 {
    task + beta * intrinsic
}

/// Intrinsic rewards plus the number of transitions that were flagged
/// (non-finite derivatives) and received 0.
#[derive(Clone, Debug, PartialEq)]
pub struct IntrinsicBatch {
    pub rewards: Vec<f64>,
    pub flagged: u64,
}

/// Mean over edges of the population variance of binary edges across members.
pub fn edge_variance(graphs: &[EdgeMask]) -> f64 {
    let m = graphs.len() as f64;
    let bits = graphs[0].bits().len();
    let mut total = 0.0;
    for e in 0..bits {
        let p = graphs.iter().filter(|g| g.bits()[e]).count() as f64 / m;
        total += p * (1.0 - p);
    }
    total / bits as f64
}

/// Mean over entries of the population variance of real-valued score matrices.
pub fn score_variance(scores: &[&[f64]]) -> f64 {
    let m = scores.len() as f64;
    let len = scores[0].len();
    let mut total = 0.0;
    for e in 0..len {
        // shifted by the first member: identical members give exactly 0
        let d: Vec<f64> = scores.iter().map(|s| s[e] - scores[0][e]).collect();
        let mean = d.iter().sum::<f64>() / m;
        total += d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / m;
    }
    total / len as f64
}

/// Mean over output dimensions of the population variance of member predictions.
pub fn prediction_variance(preds: &[Vec<Prediction>]) -> f64 {
    let flat: Vec<Vec<f64>> = preds.iter().map(|p| p.iter().flat_map(|h| h.as_vec().iter().copied()).collect()).collect();
    let refs: Vec<&[f64]> = flat.iter().map(|v| v.as_slice()).collect();
    score_variance(&refs)
}

/// Jacobian scores of every member, `[member][record]`.
fn member_scores<T: Scalar>(
    ens: &DynamicsEnsemble<T>,
    records: &[&TransitionRecord],
) -> Result<Vec<Vec<Option<Vec<f64>>>>, DynamicsError> {
    ens.members
        .iter()
        .map(|m| {
            let mut all = Vec::with_capacity(records.len());
            for chunk in records.chunks(CHUNK) {
                all.extend(jacobian_scores(&m.model, chunk)?);
            }
            Ok(all)
        })
        .collect()
}

fn threshold(n: usize, scores: &[f64], eps: f64) -> EdgeMask {
    EdgeMask::from_bits(n, scores.iter().map(|&s| s >= eps).collect())
}

/// Graph-disagreement reward for each record.
pub fn elden_rewards<T: Scalar>(
    ens: &DynamicsEnsemble<T>,
    records: &[&TransitionRecord],
    config: &RewardConfig,
) -> Result<IntrinsicBatch, DynamicsError> {
    if ens.len() < 2 {
        return Err(DynamicsError::Config("graph variance needs at least 2 members".into()));
    }
    let n = ens.schema().n_factors();
    let scores = member_scores(ens, records)?;
    let mut flagged = 0;
    let rewards = (0..records.len())
        .map(|r| {
            let per: Option<Vec<&[f64]>> = scores.iter().map(|m| m[r].as_deref()).collect();
            match per {
                None => {
                    flagged += 1;
                    0.0
                }
                Some(s) if config.continuous_variance => score_variance(&s),
                Some(s) => edge_variance(&s.iter().map(|s| threshold(n, s, config.epsilon)).collect::<Vec<_>>()),
            }
        })
        .collect();
    Ok(IntrinsicBatch { rewards, flagged })
}

/// Prediction-disagreement reward for each record.
pub fn disagreement_rewards<T: Scalar>(
    ens: &DynamicsEnsemble<T>,
    records: &[&TransitionRecord],
) -> Result<IntrinsicBatch, DynamicsError> {
    if ens.len() < 2 {
        return Err(DynamicsError::Config("disagreement needs at least 2 members".into()));
    }
    let rows: Vec<_> = records.iter().map(|r| (&r.state, r.action)).collect();
    let mut preds: Vec<Vec<Vec<Prediction>>> = Vec::with_capacity(ens.len());
    for m in &ens.members {
        let mut all = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(CHUNK) {
            all.extend(m.model.predict_batch(chunk)?);
        }
        preds.push(all);
    }
    let mut flagged = 0;
    let rewards = (0..records.len())
        .map(|r| {
            let per: Vec<Vec<Prediction>> = preds.iter().map(|m| m[r].clone()).collect();
            let v = prediction_variance(&per);
            if v.is_finite() {
                v
            } else {
                flagged += 1;
                0.0
            }
        })
        .collect();
    Ok(IntrinsicBatch { rewards, flagged })
}

/// Mean member NLL of the realized next state.
pub fn curiosity_rewards<T: Scalar>(
    ens: &DynamicsEnsemble<T>,
    records: &[&TransitionRecord],
) -> Result<IntrinsicBatch, DynamicsError> {
    let mut sums = vec![0.0; records.len()];
    for m in &ens.members {
        let mut at = 0;
        for chunk in records.chunks(CHUNK) {
            let batch = encode_batch::<T>(ens.schema(), chunk)?;
            for v in per_record_nll(&m.model, &batch)? {
                sums[at] += v;
                at += 1;
            }
        }
    }
    let mut flagged = 0;
    let rewards = sums
        .into_iter()
        .map(|s| {
            let v = s / ens.len() as f64;
            if v.is_finite() {
                v.max(0.0)
            } else {
                flagged += 1;
                0.0
            }
        })
        .collect();
    Ok(IntrinsicBatch { rewards, flagged })
}

/// Mean member count of next-state factors whose action edge is active.
pub fn cai_rewards<T: Scalar>(
    ens: &DynamicsEnsemble<T>,
    records: &[&TransitionRecord],
    epsilon: f64,
) -> Result<IntrinsicBatch, DynamicsError> {
    let n = ens.schema().n_factors();
    let scores = member_scores(ens, records)?;
    let mut flagged = 0;
    let rewards = (0..records.len())
        .map(|r| {
            let per: Option<Vec<&[f64]>> = scores.iter().map(|m| m[r].as_deref()).collect();
            match per {
                None => {
                    flagged += 1;
                    0.0
                }
                Some(s) => {
                    let count: usize = s.iter().map(|s| s[n * n..].iter().filter(|&&v| v >= epsilon).count()).sum();
                    count as f64 / s.len() as f64
                }
            }
        })
        .collect();
    Ok(IntrinsicBatch { rewards, flagged })
}

/// Intrinsic reward of the configured kind (all zero for `None`).
pub fn intrinsic_rewards<T: Scalar>(
    ens: Option<&DynamicsEnsemble<T>>,
    records: &[&TransitionRecord],
    config: &RewardConfig,
) -> Result<IntrinsicBatch, DynamicsError> {
    let zero = || IntrinsicBatch {
        rewards: vec![0.0; records.len()],
        flagged: 0,
    };
    let Some(ens) = ens else {
        return match config.kind {
            IntrinsicKind::None => Ok(zero()),
            _ => Err(DynamicsError::Config(format!("{} reward needs an ensemble", config.kind))),
        };
    };
    match config.kind {
        IntrinsicKind::Elden => elden_rewards(ens, records, config),
        IntrinsicKind::Disagreement => disagreement_rewards(ens, records),
        IntrinsicKind::Curiosity => curiosity_rewards(ens, records),
        IntrinsicKind::Cai => cai_rewards(ens, records, config.epsilon),
        IntrinsicKind::None => Ok(zero()),
    }
}
