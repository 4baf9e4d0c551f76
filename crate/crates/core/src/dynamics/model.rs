//! Factored dynamics network.
//!
//! Each input (every state factor and the action) passes through its own
//! feature extractor. A multi-head self-attention block mixes the
//! resulting tokens, and each predicted factor `j` owns an attention head
//! that queries with token `j` over all tokens, followed by an MLP and a
//! zero-initialised output layer emitting class probabilities or a
//! unit-variance Gaussian mean.

use super::config::ArchConfig;
use super::encode::encode_states;
use super::DynamicsError;
use crate::factored::{FactorKind, FactorSchema, FactoredState};
use crate::scalar::Scalar;
use crate::tensorcore::nn::{Activation, Linear, Mlp};
use crate::tensorcore::{Bound, ParamId, ParamStore, Tape, Tensor, Var};
use rand::Rng;
use std::sync::atomic::{AtomicU64, Ordering};

#[derive(Clone, Debug)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

impl Attention {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, d_in: usize, arch: &ArchConfig, rng: &mut impl Rng) -> Self {
        let hd = arch.heads * arch.head_dim;
        Self {
            q: Linear::new(store, &format!("{name}.q"), d_in, hd, false, rng),
            k: Linear::new(store, &format!("{name}.k"), d_in, hd, false, rng),
            v: Linear::new(store, &format!("{name}.v"), d_in, hd, false, rng),
            o: Linear::new(store, &format!("{name}.o"), hd, arch.attn_out, false, rng),
        }
    }

    fn params(&self) -> Vec<ParamId> {
        [&self.q, &self.k, &self.v, &self.o].iter().flat_map(|l| l.params()).collect()
    }
}

#[derive(Clone, Debug)]
struct TargetHead {
    attn: Attention,
    post: Mlp,
    out: Linear,
}

/// Per-sample forward/backward applications, counted per transition.
#[derive(Debug, Default)]
pub struct PassCounters {
    forward: AtomicU64,
    backward: AtomicU64,
}

impl Clone for PassCounters {
    fn clone(&self) -> Self {
        Self {
            forward: AtomicU64::new(self.forwards()),
            backward: AtomicU64::new(self.backwards()),
        }
    }
}

impl PassCounters {
    pub fn forwards(&self) -> u64 {
        self.forward.load(Ordering::Relaxed)
    }

    pub fn backwards(&self) -> u64 {
        self.backward.load(Ordering::Relaxed)
    }

    pub fn add_backward(&self, n: u64) {
        self.backward.fetch_add(n, Ordering::Relaxed);
    }

    pub fn reset(&self) {
        self.forward.store(0, Ordering::Relaxed);
        self.backward.store(0, Ordering::Relaxed);
    }
}

/// Predicted next-factor distribution on the tape.
#[derive(Clone, Copy, Debug)]
pub enum HeadOutput<'t, T> {
    /// Class probabilities `[B, C]`.
    Categorical(Var<'t, T>),
    /// Mean `[B, d]` of a unit-variance normal.
    Normal(Var<'t, T>),
}

impl<'t, T> HeadOutput<'t, T> {
    pub fn var(&self) -> Var<'t, T> {
        match *self {
            HeadOutput::Categorical(v) | HeadOutput::Normal(v) => v,
        }
    }
}

pub struct ForwardOut<'t, T> {
    pub heads: Vec<HeadOutput<'t, T>>,
    /// Head-averaged self-attention `[B, L, L]`; row = query token, column = key token.
    pub self_attn: Var<'t, T>,
    /// Head-averaged attention of each target's query over tokens, `[B, L]`.
    pub target_attn: Vec<Var<'t, T>>,
}

/// Concrete prediction for a single transition.
#[derive(Clone, Debug, PartialEq)]
pub enum Prediction {
    Categorical(Vec<f64>),
    Normal { mean: Vec<f64> },
}

impl Prediction {
    pub fn as_vec(&self) -> &[f64] {
        match self {
            Prediction::Categorical(p) => p,
            Prediction::Normal { mean } => mean,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsModel<T> {
    schema: FactorSchema,
    arch: ArchConfig,
    params: ParamStore<T>,
    extractors: Vec<Mlp>,
    self_attn: Attention,
    self_post: Mlp,
    heads: Vec<TargetHead>,
    counters: PassCounters,
}

fn check<T: Scalar>(v: Var<'_, T>, layer: impl FnOnce() -> String) -> Result<(), DynamicsError> {
    if v.value().is_finite() {
        Ok(())
    } else {
        Err(DynamicsError::NonFinite { layer: layer() })
    }
}

/// Multi-head scaled dot-product attention over `[B, Lq, H·dk]` queries and
/// `[B, Lk, H·dk]` keys/values. Returns the concatenated head outputs and
/// the head-averaged attention weights `[B, Lq, Lk]`.
fn attend<'t, T: Scalar>(
    q: Var<'t, T>,
    k: Var<'t, T>,
    v: Var<'t, T>,
    heads: usize,
    dk: usize,
) -> Result<(Var<'t, T>, Var<'t, T>), DynamicsError> {
    let tape = q.tape();
    let scale = T::of(1.0 / (dk as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut avg: Option<Var<'t, T>> = None;
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let (qh, kh, vh) = if heads == 1 {
            (q, k, v)
        } else {
            (q.slice(2, lo, hi)?, k.slice(2, lo, hi)?, v.slice(2, lo, hi)?)
        };
        let a = qh.matmul_t(kh, false, true)?.scale(scale).softmax();
        outs.push(a.matmul(vh)?);
        avg = Some(match avg {
            Some(s) => s.add(a)?,
            None => a,
        });
    }
    let out = if heads == 1 { outs[0] } else { tape.concat(&outs, 2)? };
    let avg = avg.expect("heads >= 1").scale(T::of(1.0 / heads as f64));
    Ok((out, avg))
}

/// Attention of one query per sample (`q`, `[B, H·dk]`) over the tokens
/// `h` (`[B, L, T]`), with keys and values `h·W_k`, `h·W_v`.
///
/// The key/value projections are linear and bias-free, so the scores are
/// computed as `(q_a W_kaᵀ)·h_l` and the output as `(Σ_l w_al h_l) W_va`:
/// the same values as projecting every token, at a fraction of the cost.
fn target_attend<'t, T: Scalar>(
    p: &Bound<'t, T>,
    attn: &Attention,
    q: Var<'t, T>,
    h: Var<'t, T>,
    heads: usize,
    dk: usize,
) -> Result<(Var<'t, T>, Var<'t, T>), DynamicsError> {
    let tape = q.tape();
    let shape = h.shape();
    let (b, l, t) = (shape[0], shape[1], shape[2]);
    let (wk, wv) = (p[attn.k.w], p[attn.v.w]);
    let mut qs = Vec::with_capacity(heads);
    for a in 0..heads {
        let (lo, hi) = (a * dk, (a + 1) * dk);
        let qa = q.slice(1, lo, hi)?.matmul_t(wk.slice(1, lo, hi)?, false, true)?;
        qs.push(qa.reshape(vec![b, 1, t])?);
    }
    let qs = if heads == 1 { qs[0] } else { tape.concat(&qs, 1)? };
    let w = qs
        .matmul_t(h, false, true)?
        .scale(T::of(1.0 / (dk as f64).sqrt()))
        .softmax();
    let ctx = w.matmul(h)?;
    let mut outs = Vec::with_capacity(heads);
    for a in 0..heads {
        let ca = ctx.slice(1, a, a + 1)?.reshape(vec![b, t])?;
        outs.push(ca.matmul(wv.slice(1, a * dk, (a + 1) * dk)?)?);
    }
    let out = if heads == 1 { outs[0] } else { tape.concat(&outs, 1)? };
    let avg = w.reduce_to(vec![b, 1, l])?.reshape(vec![b, l])?.scale(T::of(1.0 / heads as f64));
    Ok((out, avg))
}

impl<T: Scalar> DynamicsModel<T> {
    pub fn new(schema: FactorSchema, arch: ArchConfig, rng: &mut impl Rng) -> Result<Self, DynamicsError> {
        arch.validate().map_err(DynamicsError::Config)?;
        let mut store = ParamStore::new();
        let f = arch.feature_dim();
        let extractors = (0..schema.n_inputs())
            .map(|i| {
                let mut sizes = vec![schema.input_dim(i)];
                sizes.extend(&arch.extractor_hidden);
                Mlp::new(&mut store, &format!("extract{i}"), &sizes, Activation::Relu, true, rng)
            })
            .collect();
        let self_attn = Attention::new(&mut store, "self_attn", f, &arch, rng);
        let mut post = vec![arch.attn_out];
        post.extend(&arch.post_attn);
        let self_post = Mlp::new(&mut store, "self_post", &post, Activation::Relu, true, rng);
        let token = arch.token_dim();
        let heads = (0..schema.n_factors())
            .map(|j| {
                let attn = Attention::new(&mut store, &format!("head{j}.attn"), token, &arch, rng);
                let mlp = Mlp::new(&mut store, &format!("head{j}.post"), &post, Activation::Relu, true, rng);
                let out = Linear::zeros(&mut store, &format!("head{j}.out"), token, schema.input_dim(j));
                TargetHead { attn, post: mlp, out }
            })
            .collect();
        Ok(Self {
            schema,
            arch,
            params: store,
            extractors,
            self_attn,
            self_post,
            heads,
            counters: PassCounters::default(),
        })
    }

    pub fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn counters(&self) -> &PassCounters {
        &self.counters
    }

    /// Parameters owned exclusively by the prediction head of factor `j`.
    pub fn head_params(&self, j: usize) -> Vec<ParamId> {
        let h = &self.heads[j];
        let mut ids = h.attn.params();
        ids.extend(h.post.params());
        ids.extend(h.out.params());
        ids
    }

    /// Parameters of input `i`'s feature extractor.
    pub fn extractor_params(&self, i: usize) -> Vec<ParamId> {
        self.extractors[i].params()
    }

    /// Runs the network on encoded inputs (`N + 1` vars of shape `[B, d_i]`).
    ///
    /// `feature_mask`, when given, is `[B, N + 1]`; a zero entry removes that
    /// input's extracted feature for that sample.
    pub fn forward<'t>(
        &self,
        p: &Bound<'t, T>,
        inputs: &[Var<'t, T>],
        feature_mask: Option<&Tensor<T>>,
    ) -> Result<ForwardOut<'t, T>, DynamicsError> {
        let l = self.schema.n_inputs();
        if inputs.len() != l {
            return Err(DynamicsError::Config(format!("expected {l} inputs, got {}", inputs.len())));
        }
        let tape = inputs[0].tape();
        let b = inputs[0].shape()[0];
        let f = self.arch.feature_dim();
        let hd = self.arch.heads * self.arch.head_dim;
        let (heads, dk) = (self.arch.heads, self.arch.head_dim);

        let mut tokens = Vec::with_capacity(l);
        for (i, (x, ex)) in inputs.iter().zip(&self.extractors).enumerate() {
            let mut g = ex.forward(p, *x)?;
            if let Some(mask) = feature_mask {
                let col: Vec<T> = (0..b).map(|r| mask.data()[r * l + i]).collect();
                let col = tape.leaf(Tensor::new(vec![b, 1], col)?);
                g = g.mul_bcast(col)?;
            }
            check(g, || format!("feature extractor {i}"))?;
            tokens.push(g.reshape(vec![b, 1, f])?);
        }
        let g_all = tape.concat(&tokens, 1)?.reshape(vec![b * l, f])?;

        let sa = &self.self_attn;
        let q = sa.q.forward(p, g_all)?.reshape(vec![b, l, hd])?;
        let k = sa.k.forward(p, g_all)?.reshape(vec![b, l, hd])?;
        let v = sa.v.forward(p, g_all)?.reshape(vec![b, l, hd])?;
        let (o, self_weights) = attend(q, k, v, heads, dk)?;
        let o = sa.o.forward(p, o.reshape(vec![b * l, hd])?)?;
        let h_flat = self.self_post.forward(p, o)?;
        check(h_flat, || "self-attention block".into())?;
        let t = self.arch.token_dim();
        let h_tok = h_flat.reshape(vec![b, l, t])?;

        let mut outs = Vec::with_capacity(self.heads.len());
        let mut target_attn = Vec::with_capacity(self.heads.len());
        for (j, head) in self.heads.iter().enumerate() {
            let hj = h_tok.slice(1, j, j + 1)?.reshape(vec![b, t])?;
            let q = head.attn.q.forward(p, hj)?;
            let (o, w) = target_attend(p, &head.attn, q, h_tok, heads, dk)?;
            let o = head.attn.o.forward(p, o)?;
            let z = head.out.forward(p, head.post.forward(p, o)?)?;
            let out = match self.schema.factors[j].kind {
                FactorKind::Categorical { .. } => HeadOutput::Categorical(z.softmax()),
                FactorKind::Real { .. } => HeadOutput::Normal(z),
            };
            check(out.var(), || format!("prediction head {j} ({})", self.schema.factors[j].name))?;
            outs.push(out);
            target_attn.push(w);
        }
        self.counters.forward.fetch_add(b as u64, Ordering::Relaxed);
        Ok(ForwardOut {
            heads: outs,
            self_attn: self_weights,
            target_attn,
        })
    }

    /// Predicted next-factor distributions for a batch of (state, action) pairs.
    pub fn predict_batch(&self, rows: &[(&FactoredState, usize)]) -> Result<Vec<Vec<Prediction>>, DynamicsError> {
        let inputs = encode_states::<T>(&self.schema, rows)?;
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let xs: Vec<_> = inputs.into_iter().map(|x| tape.leaf(x)).collect();
        let out = self.forward(&p, &xs, None)?;
        let per_head: Vec<Tensor<T>> = out.heads.iter().map(|h| h.var().value().as_ref().clone()).collect();
        Ok((0..rows.len())
            .map(|r| {
                out.heads
                    .iter()
                    .zip(&per_head)
                    .map(|(h, t)| {
                        let row: Vec<f64> = t.row(r).iter().map(|v| v.to_f64_lossy()).collect();
                        match h {
                            HeadOutput::Categorical(_) => Prediction::Categorical(row),
                            HeadOutput::Normal(_) => Prediction::Normal { mean: row },
                        }
                    })
                    .collect()
            })
            .collect())
    }

    pub fn predict(&self, state: &FactoredState, action: usize) -> Result<Vec<Prediction>, DynamicsError> {
        Ok(self.predict_batch(&[(state, action)])?.remove(0))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::Factor;
    use rand::SeedableRng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            extractor_hidden: vec![8, 8],
            heads: 2,
            head_dim: 4,
            attn_out: 8,
            post_attn: vec![8, 8],
        }
    }

    fn schema() -> FactorSchema {
        FactorSchema::new(
            vec![Factor::categorical("a", 3), Factor::real("b", 2), Factor::categorical("c", 4)],
            2,
        )
        .unwrap()
    }

    fn model(seed: u64) -> DynamicsModel<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DynamicsModel::new(schema(), small_arch(), &mut rng).unwrap()
    }

    #[test]
    fn reassociated_target_attention_matches_direct_projection() {
        let m = model(5);
        let tape = Tape::new();
        let p = m.params().bind(&tape);
        let (b, l, t) = (3, 4, 8);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let h: Vec<f64> = (0..b * l * t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = tape.leaf(Tensor::from_f64(vec![b, l, t], &h).unwrap());
        let attn = &m.heads[1].attn;
        let hj = h.slice(1, 2, 3).unwrap().reshape(vec![b, t]).unwrap();
        let q = attn.q.forward(&p, hj).unwrap();
        let (fast, fast_w) = target_attend(&p, attn, q, h, 2, 4).unwrap();

        let flat = h.reshape(vec![b * l, t]).unwrap();
        let k = attn.k.forward(&p, flat).unwrap().reshape(vec![b, l, 8]).unwrap();
        let v = attn.v.forward(&p, flat).unwrap().reshape(vec![b, l, 8]).unwrap();
        let (direct, direct_w) = attend(q.reshape(vec![b, 1, 8]).unwrap(), k, v, 2, 4).unwrap();
        let pairs = [(fast.value(), direct.value()), (fast_w.value(), direct_w.value())];
        for (x, y) in pairs {
            assert_eq!(x.numel(), y.numel());
            for (a, c) in x.data().iter().zip(y.data()) {
                assert!((a - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn untrained_model_predicts_uniform_and_zero_mean() {
        let m = model(0);
        let preds = m.predict(&FactoredState(vec![1.0, 0.5, -0.5, 3.0]), 1).unwrap();
        assert_eq!(preds[0], Prediction::Categorical(vec![1.0 / 3.0; 3]));
        assert_eq!(preds[1], Prediction::Normal { mean: vec![0.0, 0.0] });
        assert_eq!(preds[2], Prediction::Categorical(vec![0.25; 4]));
    }

    fn randomize(m: &mut DynamicsModel<f64>, seed: u64) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        for t in m.params_mut().tensors_mut() {
            for v in t.data_mut() {
                *v = rng.random_range(-0.5..0.5);
            }
        }
    }

    #[test]
    fn batch_prediction_equals_stacked_singles() {
        let mut m = model(1);
        randomize(&mut m, 2);
        let s1 = FactoredState(vec![0.0, 0.1, 0.2, 1.0]);
        let s2 = FactoredState(vec![2.0, -1.0, 0.7, 3.0]);
        let batch = m.predict_batch(&[(&s1, 0), (&s2, 1)]).unwrap();
        let one = m.predict(&s1, 0).unwrap();
        let two = m.predict(&s2, 1).unwrap();
        for (b, s) in batch[0].iter().zip(&one).chain(batch[1].iter().zip(&two)) {
            for (x, y) in b.as_vec().iter().zip(s.as_vec()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        for p in &batch[0] {
            if let Prediction::Categorical(probs) = p {
                assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn perturbing_one_head_leaves_other_factors_unchanged() {
        let mut m = model(3);
        randomize(&mut m, 4);
        let s = FactoredState(vec![1.0, 0.3, -0.2, 2.0]);
        let before = m.predict(&s, 1).unwrap();
        for id in m.head_params(1) {
            for v in m.params_mut().get_mut(id).data_mut() {
                *v += 0.3;
            }
        }
        let after = m.predict(&s, 1).unwrap();
        assert_eq!(before[0], after[0]);
        assert_eq!(before[2], after[2]);
        assert_ne!(before[1], after[1]);
    }

    #[test]
    fn forward_counter_counts_transitions() {
        let m = model(5);
        let s = FactoredState(vec![1.0, 0.3, -0.2, 2.0]);
        m.predict_batch(&[(&s, 0), (&s, 1), (&s, 0)]).unwrap();
        assert_eq!(m.counters().forwards(), 3);
    }

    #[test]
    fn non_finite_activation_names_layer() {
        let mut m = model(6);
        let id = m.extractor_params(1)[0];
        m.params_mut().get_mut(id).data_mut()[0] = f64::NAN;
        let err = m.predict(&FactoredState(vec![1.0, 0.3, -0.2, 2.0]), 0).unwrap_err();
        assert!(err.to_string().contains("feature extractor 1"), "{err}");
    }
}
