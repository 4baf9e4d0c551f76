//! Per-transition dependency scores from a trained dynamics model.

use crate::dynamics::{encode_batch, log_likelihoods, DynamicsError, DynamicsModel};
use crate::factored::{EdgeMask, TransitionRecord};
use crate::scalar::Scalar;
use crate::tensorcore::{input_jacobian, Tape, Tensor};

/// Default partial-derivative threshold.
pub const DEFAULT_EPSILON: f64 = 3e-4;

/// `(N+1)×N` scores (row: input factor, last row the action; column: next
/// factor) and the edges at or above `threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct LocalDependencyGraph {
    n: usize,
    scores: Vec<f64>,
    pub edges: EdgeMask,
    pub threshold: f64,
}

impl LocalDependencyGraph {
    pub fn from_scores(n_factors: usize, scores: Vec<f64>, threshold: f64) -> Self {
        assert_eq!(scores.len(), (n_factors + 1) * n_factors);
        let bits = scores.iter().map(|&s| s >= threshold).collect();
        Self {
            n: n_factors,
            scores,
            edges: EdgeMask::from_bits(n_factors, bits),
            threshold,
        }
    }

    pub fn n_factors(&self) -> usize {
        self.n
    }

    pub fn score(&self, input: usize, target: usize) -> f64 {
        self.scores[input * self.n + target]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    /// Same scores, different threshold.
    pub fn rethreshold(&self, threshold: f64) -> Self {
        Self::from_scores(self.n, self.scores.clone(), threshold)
    }
}

/// Largest magnitude in row `row` of one input's derivative block.
fn block_max<T: Scalar>(block: &Tensor<T>, row: usize) -> f64 {
    block.row(row).iter().fold(0.0, |m, v| m.max(v.to_f64_lossy().abs()))
}

/// Raw `(N+1)×N` score matrices, one per record, or `None` for records
/// whose Jacobian was non-finite.
pub type ScoreRows = Vec<Option<Vec<f64>>>;

/// `|∂ log p̂(s^j_{t+1}) / ∂ input|` maxed over each input's dims, for a batch
/// of transitions. One forward and `N` backward passes per transition.
pub fn jacobian_scores<T: Scalar>(model: &DynamicsModel<T>, records: &[&TransitionRecord]) -> Result<ScoreRows, DynamicsError> {
    let batch = encode_batch::<T>(model.schema(), records)?;
    let n = model.schema().n_factors();
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xs: Vec<_> = batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = model.forward(&p, &xs, None)?;
    let lls = log_likelihoods(&out, &batch.targets)?;
    let jac = input_jacobian(&tape, &lls, &xs)?;
    model.counters().add_backward((batch.len * n) as u64);
    let blocks: Vec<Vec<_>> = jac.iter().map(|per_in| per_in.iter().map(|v| v.value()).collect()).collect();
    Ok((0..batch.len)
        .map(|b| {
            let mut s = vec![0.0; (n + 1) * n];
            for (j, per_in) in blocks.iter().enumerate() {
                for (i, block) in per_in.iter().enumerate() {
                    s[i * n + j] = block_max(block, b);
                }
            }
            s.iter().all(|v| v.is_finite()).then_some(s)
        })
        .collect())
}

/// Thresholded graphs for a batch; `None` marks a flagged transition.
pub fn extract_graphs<T: Scalar>(
    model: &DynamicsModel<T>,
    records: &[&TransitionRecord],
    epsilon: f64,
) -> Result<Vec<Option<LocalDependencyGraph>>, DynamicsError> {
    let n = model.schema().n_factors();
    Ok(jacobian_scores(model, records)?
        .into_iter()
        .map(|s| s.map(|s| LocalDependencyGraph::from_scores(n, s, epsilon)))
        .collect())
}

pub fn extract_graph<T: Scalar>(
    model: &DynamicsModel<T>,
    record: &TransitionRecord,
    epsilon: f64,
) -> Result<Option<LocalDependencyGraph>, DynamicsError> {
    Ok(extract_graphs(model, &[record], epsilon)?.pop().flatten())
}

/// Point-wise conditional mutual information: entry `(i, j)` is
/// `log p̂(s^j | s, a) − log p̂(s^j | s without input i, a)`.
///
/// Dropping input `i` zeroes its extracted feature, which is only
/// meaningful for a model trained with feature dropout. The full model
/// and the `N + 1` leave-one-out variants run as one stacked batch, so
/// each transition costs `N + 2` forward applications and no backward pass.
pub fn pcmi_scores<T: Scalar>(model: &DynamicsModel<T>, records: &[&TransitionRecord]) -> Result<Vec<Vec<f64>>, DynamicsError> {
    let batch = encode_batch::<T>(model.schema(), records)?;
    let (n, l, b) = (model.schema().n_factors(), model.schema().n_inputs(), batch.len);
    let variants = l + 1;
    let stack = |ts: &[Tensor<T>]| -> Result<Vec<Tensor<T>>, DynamicsError> {
        ts.iter()
            .map(|t| {
                let mut data = Vec::with_capacity(t.numel() * variants);
                for _ in 0..variants {
                    data.extend_from_slice(t.data());
                }
                let mut shape = t.shape().to_vec();
                shape[0] *= variants;
                Ok(Tensor::new(shape, data)?)
            })
            .collect()
    };
    let inputs = stack(&batch.inputs)?;
    let targets = stack(&batch.targets)?;
    // variant 0 keeps everything; variant v ≥ 1 drops input v − 1
    let mut mask = vec![T::one(); variants * b * l];
    for v in 1..variants {
        for r in 0..b {
            mask[(v * b + r) * l + (v - 1)] = T::zero();
        }
    }
    let mask = Tensor::new(vec![variants * b, l], mask)?;
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xs: Vec<_> = inputs.into_iter().map(|x| tape.leaf(x)).collect();
    let out = model.forward(&p, &xs, Some(&mask))?;
    let lls: Vec<Vec<f64>> = log_likelihoods(&out, &targets)?
        .iter()
        .map(|v| v.value().data().iter().map(|x| x.to_f64_lossy()).collect())
        .collect();
    Ok((0..b)
        .map(|r| {
            let mut s = vec![0.0; l * n];
            for i in 0..l {
                for j in 0..n {
                    s[i * n + j] = lls[j][r] - lls[j][(i + 1) * b + r];
                }
            }
            s
        })
        .collect())
}

/// Attention-flow scores: `Σ_k a(k ← i) · c_j(k)`, where `a` is the
/// head-averaged self-attention (token `k` attending to input `i`) and
/// `c_j` the head-averaged attention of target `j`'s head over tokens.
pub fn attention_scores<T: Scalar>(model: &DynamicsModel<T>, records: &[&TransitionRecord]) -> Result<Vec<Vec<f64>>, DynamicsError> {
    let batch = encode_batch::<T>(model.schema(), records)?;
    let (n, l) = (model.schema().n_factors(), model.schema().n_inputs());
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xs: Vec<_> = batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = model.forward(&p, &xs, None)?;
    let sa = out.self_attn.value();
    let heads: Vec<_> = out.target_attn.iter().map(|v| v.value()).collect();
    let to64 = |xs: &[T]| xs.iter().map(|x| x.to_f64_lossy()).collect::<Vec<f64>>();
    Ok((0..batch.len)
        .map(|b| {
            let a = to64(&sa.data()[b * l * l..(b + 1) * l * l]);
            let c: Vec<Vec<f64>> = heads.iter().map(|h| to64(h.row(b))).collect();
            debug_assert_eq!(c.len(), n);
            compose_attention(&a, &c, l)
        })
        .collect())
}

/// Composition used by [`attention_scores`], on explicit matrices:
/// `self_attn` is `L×L` (row = attending token), `head` is `N` rows of `L`.
pub fn compose_attention(self_attn: &[f64], heads: &[Vec<f64>], l: usize) -> Vec<f64> {
    let n = heads.len();
    let mut s = vec![0.0; l * n];
    for (j, c) in heads.iter().enumerate() {
        for i in 0..l {
            s[i * n + j] = (0..l).map(|k| self_attn[k * l + i] * c[k]).sum();
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_defines_edges() {
        let g = LocalDependencyGraph::from_scores(2, vec![0.5, 0.0, 1e-4, 3e-4, 0.0, 2.0], 3e-4);
        assert!(g.edges.get(0, 0) && !g.edges.get(0, 1) && !g.edges.get(1, 0) && g.edges.get(1, 1));
        assert!(!g.edges.get(2, 0) && g.edges.get(2, 1));
        assert_eq!(g.rethreshold(10.0).edges.count(), 0);
    }

    #[test]
    fn uniform_attention_gives_uniform_scores() {
        let l = 4;
        let a = vec![0.25; l * l];
        let heads = vec![vec![0.25; l]; 3];
        for s in compose_attention(&a, &heads, l) {
            assert!((s - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn one_hot_attention_chains() {
        // token 2 attends to input 0; head 1 attends to token 2
        let l = 3;
        let mut a = vec![0.0; l * l];
        a[0] = 1.0; // token 0 ← input 0
        a[l + 1] = 1.0; // token 1 ← input 1
        a[2 * l] = 1.0; // token 2 ← input 0
        let heads = vec![vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        let s = compose_attention(&a, &heads, l);
        assert_eq!(s, vec![0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }
}
