use super::DynamicsError;
use crate::factored::{FactorKind, FactorSchema, FactoredState, TransitionRecord};
use crate::scalar::Scalar;
use crate::tensorcore::Tensor;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Beta, Distribution};

/// Model-ready tensors for a batch of transitions.
///
/// `inputs[i]` is `[B, d_i]` for every factor and, last, the action one-hot.
/// `targets[j]` is `[B, C_j]` (a distribution over classes) for categorical
/// factors and `[B, d_j]` for real ones.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedBatch<T> {
    pub inputs: Vec<Tensor<T>>,
    pub targets: Vec<Tensor<T>>,
    pub len: usize,
}

fn encode_factor(schema: &FactorSchema, state: &FactoredState, i: usize, out: &mut Vec<f64>) -> Result<(), DynamicsError> {
    let f = &schema.factors[i];
    let vals = state.values(schema, i);
    match f.kind {
        FactorKind::Categorical { classes } => {
            let v = vals[0];
            if v < 0.0 || v.fract() != 0.0 || v as usize >= classes {
                return Err(DynamicsError::Schema(crate::factored::SchemaError::CategoryOutOfRange {
                    factor: f.name.clone(),
                    value: v,
                    classes,
                }));
            }
            let start = out.len();
            out.resize(start + classes, 0.0);
            out[start + v as usize] = 1.0;
        }
        FactorKind::Real { .. } => out.extend_from_slice(vals),
    }
    Ok(())
}

/// One-hot encodes categorical factors and the action; real factors pass through.
/// Returns `N + 1` tensors of shape `[1, d_i]`.
pub fn encode<T: Scalar>(schema: &FactorSchema, state: &FactoredState, action: usize) -> Result<Vec<Tensor<T>>, DynamicsError> {
    encode_states(schema, &[(state, action)])
}

/// Batched [`encode`]: `N + 1` tensors of shape `[B, d_i]`.
pub fn encode_states<T: Scalar>(schema: &FactorSchema, rows: &[(&FactoredState, usize)]) -> Result<Vec<Tensor<T>>, DynamicsError> {
    let b = rows.len();
    let mut cols: Vec<Vec<f64>> = (0..schema.n_inputs()).map(|i| Vec::with_capacity(b * schema.input_dim(i))).collect();
    for (state, action) in rows {
        if state.0.len() != schema.state_width() {
            schema.validate(state)?;
        }
        schema.validate_action(*action)?;
        for i in 0..schema.n_factors() {
            encode_factor(schema, state, i, &mut cols[i])?;
        }
        let a = &mut cols[schema.n_factors()];
        let start = a.len();
        a.resize(start + schema.actions, 0.0);
        a[start + action] = 1.0;
    }
    Ok(cols
        .into_iter()
        .enumerate()
        .map(|(i, c)| Tensor::from_f64(vec![b, schema.input_dim(i)], &c))
        .collect::<Result<_, _>>()?)
}

/// Encodes the (state, action) inputs and next-state targets of `records`.
pub fn encode_batch<T: Scalar>(schema: &FactorSchema, records: &[&TransitionRecord]) -> Result<EncodedBatch<T>, DynamicsError> {
    if records.is_empty() {
        return Err(DynamicsError::EmptyBatch);
    }
    let rows: Vec<_> = records.iter().map(|r| (&r.state, r.action)).collect();
    let inputs = encode_states::<T>(schema, &rows)?;
    let b = records.len();
    let mut targets = Vec::with_capacity(schema.n_factors());
    for j in 0..schema.n_factors() {
        let mut col = Vec::with_capacity(b * schema.input_dim(j));
        for r in records {
            encode_factor(schema, &r.next, j, &mut col)?;
        }
        targets.push(Tensor::from_f64(vec![b, schema.input_dim(j)], &col)?);
    }
    Ok(EncodedBatch { inputs, targets, len: b })
}

/// Blends sample `b` with sample `partner[b]` using weight `weights[b]`
/// on the first: `w·x_b + (1 − w)·x_partner`, for inputs and targets alike.
pub fn mixup_with<T: Scalar>(batch: &EncodedBatch<T>, partner: &[usize], weights: &[f64]) -> EncodedBatch<T> {
    assert_eq!(partner.len(), batch.len);
    assert_eq!(weights.len(), batch.len);
    let blend = |t: &Tensor<T>| {
        let d = t.shape()[1];
        let mut out = t.clone();
        for (b, (&p, &w)) in partner.iter().zip(weights).enumerate() {
            let w = T::of(w);
            for k in 0..d {
                out.data_mut()[b * d + k] = w * t.data()[b * d + k] + (T::one() - w) * t.data()[p * d + k];
            }
        }
        out
    };
    EncodedBatch {
        inputs: batch.inputs.iter().map(blend).collect(),
        targets: batch.targets.iter().map(blend).collect(),
        len: batch.len,
    }
}

/// Mixup over a random within-batch permutation, weights drawn from `Beta(α, α)`.
/// The action one-hot is blended like every other input.
pub fn mixup_batch<T: Scalar>(batch: &EncodedBatch<T>, alpha: f64, rng: &mut impl Rng) -> Result<EncodedBatch<T>, DynamicsError> {
    if batch.len < 2 {
        return Err(DynamicsError::BatchTooSmall(batch.len));
    }
    let beta = Beta::new(alpha, alpha).map_err(|e| DynamicsError::Config(format!("mixup alpha {alpha}: {e}")))?;
    let mut partner: Vec<usize> = (0..batch.len).collect();
    partner.shuffle(rng);
    let weights: Vec<f64> = (0..batch.len).map(|_| beta.sample(rng)).collect();
    Ok(mixup_with(batch, &partner, &weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::{EdgeMask, Factor};
    use rand::SeedableRng;

    fn schema() -> FactorSchema {
        FactorSchema::new(vec![Factor::categorical("c", 4), Factor::real("r", 2)], 2).unwrap()
    }

    fn rec(c: f64, r: [f64; 2], a: usize, nc: f64) -> TransitionRecord {
        TransitionRecord {
            state: FactoredState(vec![c, r[0], r[1]]),
            action: a,
            next: FactoredState(vec![nc, r[0], r[1]]),
            reward: 0.0,
            done: false,
            graph: EdgeMask::empty(2),
            stage: 0,
        }
    }

    #[test]
    fn one_hot_and_passthrough() {
        let x: Vec<Tensor<f64>> = encode(&schema(), &FactoredState(vec![2.0, 0.3, -1.2]), 1).unwrap();
        assert_eq!(x[0].data(), &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(x[1].data(), &[0.3, -1.2]);
        assert_eq!(x[2].data(), &[0.0, 1.0]);
    }

    #[test]
    fn out_of_range_category_rejected() {
        let err = encode::<f64>(&schema(), &FactoredState(vec![4.0, 0.0, 0.0]), 0).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
        assert!(encode::<f64>(&schema(), &FactoredState(vec![1.0, 0.0, 0.0]), 2).is_err());
    }

    #[test]
    fn mixup_weight_one_keeps_first_and_half_blends() {
        let s = FactorSchema::new(vec![Factor::categorical("a", 2), Factor::categorical("b", 2)], 2).unwrap();
        let r0 = TransitionRecord {
            state: FactoredState(vec![0.0, 0.0]),
            action: 0,
            next: FactoredState(vec![0.0, 1.0]),
            reward: 0.0,
            done: false,
            graph: EdgeMask::empty(2),
            stage: 0,
        };
        let mut r1 = r0.clone();
        r1.state = FactoredState(vec![1.0, 0.0]);
        r1.next = FactoredState(vec![1.0, 1.0]);
        let batch = encode_batch::<f64>(&s, &[&r0, &r1]).unwrap();
        let same = mixup_with(&batch, &[1, 0], &[1.0, 1.0]);
        assert_eq!(same, batch);
        let half = mixup_with(&batch, &[1, 0], &[0.5, 0.5]);
        assert_eq!(half.inputs[0].row(0), &[0.5, 0.5]);
        assert_eq!(half.targets[0].row(0), &[0.5, 0.5]);
        // identical actions stay one-hot
        assert_eq!(half.inputs[2].row(0), &[1.0, 0.0]);
    }

    #[test]
    fn mixup_requires_two_samples_and_stays_on_simplex() {
        let s = schema();
        let recs: Vec<_> = (0..6).map(|k| rec((k % 4) as f64, [k as f64, 1.0], k % 2, ((k + 1) % 4) as f64)).collect();
        let refs: Vec<_> = recs.iter().collect();
        let batch = encode_batch::<f64>(&s, &refs).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mixed = mixup_batch(&batch, 0.4, &mut rng).unwrap();
        for t in [&mixed.inputs[0], &mixed.inputs[2], &mixed.targets[0]] {
            for b in 0..6 {
                let row = t.row(b);
                assert!(row.iter().all(|&v| v >= 0.0));
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let single = encode_batch::<f64>(&s, &refs[..1]).unwrap();
        assert!(matches!(mixup_batch(&single, 1.0, &mut rng), Err(DynamicsError::BatchTooSmall(1))));
    }
}
