//! Likelihood, negative log-likelihood and the input-derivative penalty.

use super::encode::EncodedBatch;
use super::model::{DynamicsModel, ForwardOut, HeadOutput};
use super::DynamicsError;
use crate::scalar::Scalar;
use crate::tensorcore::{abs_sum, input_jacobian, Tape, Tensor, Var};

/// Probabilities are clamped here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

/// Per-factor log-likelihood of `targets`, each `[B, 1]`.
///
/// Categorical targets may be blended label distributions; the result is
/// then `Σ_c y_c log p_c`. Real targets use a unit-variance normal.
pub fn log_likelihoods<'t, T: Scalar>(
    out: &ForwardOut<'t, T>,
    targets: &[Tensor<T>],
) -> Result<Vec<Var<'t, T>>, DynamicsError> {
    let mut res = Vec::with_capacity(out.heads.len());
    for (head, y) in out.heads.iter().zip(targets) {
        let tape = head.var().tape();
        let y = tape.leaf(y.clone());
        let ll = match *head {
            HeadOutput::Categorical(p) => p.clamp(Some(T::of(PROB_FLOOR)), None).log().mul(y)?.sum_last()?,
            HeadOutput::Normal(mean) => {
                let d = mean.shape()[1];
                let diff = mean.sub(y)?;
                let c = tape.scalar(T::of(-0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln()));
                diff.mul(diff)?.sum_last()?.scale(T::of(-0.5)).add_bcast(c)?
            }
        };
        res.push(ll);
    }
    Ok(res)
}

/// Count of (sample, class) entries whose probability was clamped while
/// carrying label mass.
pub fn underflow_count<T: Scalar>(out: &ForwardOut<'_, T>, targets: &[Tensor<T>]) -> u64 {
    let floor = T::of(PROB_FLOOR);
    let mut n = 0;
    for (head, y) in out.heads.iter().zip(targets) {
        if let HeadOutput::Categorical(p) = head {
            let p = p.value();
            n += p
                .data()
                .iter()
                .zip(y.data())
                .filter(|(&pi, &yi)| pi < floor && yi > T::zero())
                .count() as u64;
        }
    }
    n
}

/// Mean over the batch of `−Σ_j log p̂_j`, plus the per-record values.
pub fn nll_from<'t, T: Scalar>(logliks: &[Var<'t, T>]) -> Result<(Var<'t, T>, Vec<f64>), DynamicsError> {
    let mut total = logliks[0];
    for ll in &logliks[1..] {
        total = total.add(*ll)?;
    }
    let per_record = total.value().data().iter().map(|v| -v.to_f64_lossy()).collect();
    Ok((total.mean().scale(-T::one()), per_record))
}

/// Batch-mean of `Σ_{j} Σ_{input dims} |∂ log p̂_j / ∂ x|`, recorded on the tape.
pub fn penalty_from<'t, T: Scalar>(
    tape: &'t Tape<T>,
    logliks: &[Var<'t, T>],
    inputs: &[Var<'t, T>],
) -> Result<Var<'t, T>, DynamicsError> {
    let b = inputs[0].shape()[0];
    let jac = input_jacobian(tape, logliks, inputs)?;
    Ok(abs_sum(tape, &jac)?.scale(T::of(1.0 / b as f64)))
}

/// Scalar NLL of `model` on `batch`.
pub fn nll_loss<T: Scalar>(model: &DynamicsModel<T>, batch: &EncodedBatch<T>) -> Result<f64, DynamicsError> {
    Ok(per_record_nll(model, batch)?.iter().sum::<f64>() / batch.len as f64)
}

/// `−Σ_j log p̂_j` for each record of `batch`.
pub fn per_record_nll<T: Scalar>(model: &DynamicsModel<T>, batch: &EncodedBatch<T>) -> Result<Vec<f64>, DynamicsError> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xs: Vec<_> = batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = model.forward(&p, &xs, None)?;
    let lls = log_likelihoods(&out, &batch.targets)?;
    Ok(nll_from(&lls)?.1)
}

/// Scalar Jacobian penalty of `model` on `batch`.
pub fn jacobian_penalty<T: Scalar>(model: &DynamicsModel<T>, batch: &EncodedBatch<T>) -> Result<f64, DynamicsError> {
    let tape = Tape::new();
    let p = model.params().bind(&tape);
    let xs: Vec<_> = batch.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
    let out = model.forward(&p, &xs, None)?;
    let lls = log_likelihoods(&out, &batch.targets)?;
    let pen = penalty_from(&tape, &lls, &xs)?;
    model
        .counters()
        .add_backward((batch.len * lls.len()) as u64);
    let v = pen.item().to_f64_lossy();
    if !v.is_finite() {
        return Err(DynamicsError::NonFinite { layer: "input jacobian".into() });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::config::ArchConfig;
    use crate::dynamics::encode::encode_batch;
    use crate::factored::{EdgeMask, Factor, FactorSchema, FactoredState, TransitionRecord};
    use rand::SeedableRng;

    fn tiny() -> ArchConfig {
        ArchConfig {
            extractor_hidden: vec![6],
            heads: 1,
            head_dim: 4,
            attn_out: 6,
            post_attn: vec![6],
        }
    }

    fn record(s: [f64; 2], a: usize, n: [f64; 2]) -> TransitionRecord {
        TransitionRecord {
            state: FactoredState(s.to_vec()),
            action: a,
            next: FactoredState(n.to_vec()),
            reward: 0.0,
            done: false,
            graph: EdgeMask::empty(2),
            stage: 0,
        }
    }

    #[test]
    fn uniform_categorical_costs_log_classes() {
        let schema = FactorSchema::new(vec![Factor::categorical("a", 4), Factor::categorical("b", 4)], 2).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let m = DynamicsModel::<f64>::new(schema.clone(), tiny(), &mut rng).unwrap();
        let r = record([1.0, 2.0], 0, [3.0, 0.0]);
        let batch = encode_batch(&schema, &[&r]).unwrap();
        let nll = nll_loss(&m, &batch).unwrap();
        // two factors, each uniform over 4 classes
        assert!((nll - 2.0 * 4f64.ln()).abs() < 1e-12);
        // zero output layers: predictions ignore the inputs entirely
        assert_eq!(jacobian_penalty(&m, &batch).unwrap(), 0.0);
    }

    #[test]
    fn perfect_and_blended_label_cases() {
        let tape = Tape::<f64>::new();
        let p = tape.leaf(Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap());
        let lls = vec![p.clamp(Some(PROB_FLOOR), None).log().mul(tape.leaf(Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap())).unwrap().sum_last().unwrap()];
        let (loss, _) = nll_from(&lls).unwrap();
        assert_eq!(loss.item(), 0.0);

        let out = ForwardOut {
            heads: vec![HeadOutput::Categorical(tape.leaf(Tensor::from_f64(vec![1, 2], &[0.5, 0.5]).unwrap()))],
            self_attn: tape.scalar(0.0),
            target_attn: vec![],
        };
        let y = Tensor::from_f64(vec![1, 2], &[0.5, 0.5]).unwrap();
        let lls = log_likelihoods(&out, &[y]).unwrap();
        let (loss, per) = nll_from(&lls).unwrap();
        assert!((loss.item() - 2f64.ln()).abs() < 1e-15);
        assert!((per[0] - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn underflow_is_clamped_and_counted() {
        let tape = Tape::<f64>::new();
        let out = ForwardOut {
            heads: vec![HeadOutput::Categorical(tape.leaf(Tensor::from_f64(vec![1, 2], &[1.0, 0.0]).unwrap()))],
            self_attn: tape.scalar(0.0),
            target_attn: vec![],
        };
        let y = Tensor::from_f64(vec![1, 2], &[0.0, 1.0]).unwrap();
        assert_eq!(underflow_count(&out, std::slice::from_ref(&y)), 1);
        let lls = log_likelihoods(&out, &[y]).unwrap();
        let (loss, _) = nll_from(&lls).unwrap();
        assert!((loss.item() - (-PROB_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn normal_head_log_likelihood() {
        let tape = Tape::<f64>::new();
        let out = ForwardOut {
            heads: vec![HeadOutput::Normal(tape.leaf(Tensor::from_f64(vec![1, 2], &[0.0, 1.0]).unwrap()))],
            self_attn: tape.scalar(0.0),
            target_attn: vec![],
        };
        let y = Tensor::from_f64(vec![1, 2], &[1.0, 1.0]).unwrap();
        let ll = log_likelihoods(&out, &[y]).unwrap()[0].item();
        let want = -0.5 - (2.0 * std::f64::consts::PI).ln();
        assert!((ll - want).abs() < 1e-14);
    }

    /// Central-difference derivative of the log-likelihood of a 1-in, 1-out
    /// linear-Gaussian map, compared with the recorded penalty.
    #[test]
    fn linear_model_penalty_matches_finite_difference() {
        let w = 1.7;
        let (x0, y) = (0.4, 1.1);
        let ll = |x: f64| -0.5 * (w * x - y) * (w * x - y) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let h = 1e-5;
        let fd = ((ll(x0 + h) - ll(x0 - h)) / (2.0 * h)).abs();

        let tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_f64(vec![1, 1], &[x0]).unwrap());
        let wv = tape.leaf(Tensor::from_f64(vec![1, 1], &[w]).unwrap());
        let out = ForwardOut {
            heads: vec![HeadOutput::Normal(x.matmul(wv).unwrap())],
            self_attn: tape.scalar(0.0),
            target_attn: vec![],
        };
        let lls = log_likelihoods(&out, &[Tensor::from_f64(vec![1, 1], &[y]).unwrap()]).unwrap();
        let pen = penalty_from(&tape, &lls, &[x]).unwrap().item();
        assert!((pen - fd).abs() / fd < 1e-8, "{pen} vs {fd}");
        // |w| times the chain factor |y − w x|
        assert!((pen - w * (y - w * x0).abs()).abs() < 1e-12);
    }

    /// Feeding one factor through two input dims doubles its share of the penalty
    /// (residual held fixed).
    #[test]
    fn duplicated_factor_doubles_contribution() {
        let (w, x0, y) = (0.8, 0.25, -0.4);
        let pen = |copies: usize| {
            let tape = Tape::<f64>::new();
            let x = tape.leaf(Tensor::from_f64(vec![1, copies], &vec![x0; copies]).unwrap());
            let wv = tape.leaf(Tensor::from_f64(vec![copies, 1], &vec![w; copies]).unwrap());
            let target = y + (copies - 1) as f64 * w * x0;
            let out = ForwardOut {
                heads: vec![HeadOutput::Normal(x.matmul(wv).unwrap())],
                self_attn: tape.scalar(0.0),
                target_attn: vec![],
            };
            let lls = log_likelihoods(&out, &[Tensor::from_f64(vec![1, 1], &[target]).unwrap()]).unwrap();
            penalty_from(&tape, &lls, &[x]).unwrap().item()
        };
        assert!((pen(2) - 2.0 * pen(1)).abs() < 1e-14);
    }
}
