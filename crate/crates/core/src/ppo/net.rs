use super::PpoConfig;
use crate::factored::{FactorKind, FactorSchema, FactoredState};
use crate::scalar::Scalar;
use crate::tensorcore::nn::{Activation, Linear, Mlp};
use crate::tensorcore::{Bound, ParamStore, Tape, Tensor, TensorError, Var};
use rand::Rng;

/// One-hot categorical factors and raw real factors, concatenated.
pub fn flatten_state<T: Scalar>(schema: &FactorSchema, state: &FactoredState, out: &mut Vec<T>) {
    for (i, f) in schema.factors.iter().enumerate() {
        let slots = state.values(schema, i);
        match f.kind {
            FactorKind::Categorical { classes } => {
                let c = slots[0] as usize;
                out.extend((0..classes).map(|k| if k == c { T::one() } else { T::zero() }));
            }
            FactorKind::Real { .. } => out.extend(slots.iter().map(|&v| T::of(v))),
        }
    }
}

/// Separate tanh trunks for the policy and the value function.
#[derive(Clone, Debug)]
pub struct PolicyValueNet<T> {
    schema: FactorSchema,
    params: ParamStore<T>,
    policy_trunk: Mlp,
    policy_head: Linear,
    value_trunk: Mlp,
    value_head: Linear,
    input_dim: usize,
}

const LOGP_FLOOR: f64 = 1e-30;

impl<T: Scalar> PolicyValueNet<T> {
    /// The policy head starts at zero, so the initial policy is uniform.
    pub fn new(schema: FactorSchema, config: &PpoConfig, rng: &mut impl Rng) -> Self {
        let input_dim: usize = schema.factors.iter().map(|f| f.encoded_dim()).sum();
        let mut sizes = vec![input_dim];
        sizes.extend(&config.hidden);
        let width = *config.hidden.last().expect("validated");
        let mut params = ParamStore::new();
        let policy_trunk = Mlp::new(&mut params, "pi", &sizes, Activation::Tanh, true, rng);
        let policy_head = Linear::zeros(&mut params, "pi.out", width, schema.actions);
        let value_trunk = Mlp::new(&mut params, "v", &sizes, Activation::Tanh, true, rng);
        let value_head = Linear::new(&mut params, "v.out", width, 1, true, rng);
        Self {
            schema,
            params,
            policy_trunk,
            policy_head,
            value_trunk,
            value_head,
            input_dim,
        }
    }

    pub fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn n_actions(&self) -> usize {
        self.schema.actions
    }

    pub fn encode(&self, states: &[&FactoredState]) -> Result<Tensor<T>, TensorError> {
        let mut data = Vec::with_capacity(states.len() * self.input_dim);
        for s in states {
            flatten_state(&self.schema, s, &mut data);
        }
        Tensor::new(vec![states.len(), self.input_dim], data)
    }

    /// Log-probabilities `[B, A]` and values `[B, 1]`.
    pub fn forward<'t>(&self, p: &Bound<'t, T>, x: Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>), TensorError> {
        let logits = self.policy_head.forward(p, self.policy_trunk.forward(p, x)?)?;
        let logp = logits.softmax().clamp(Some(T::of(LOGP_FLOOR)), None).log();
        let value = self.value_head.forward(p, self.value_trunk.forward(p, x)?)?;
        Ok((logp, value))
    }

    /// Log-probabilities and values as plain numbers.
    pub fn evaluate(&self, states: &[&FactoredState]) -> Result<(Vec<Vec<f64>>, Vec<f64>), TensorError> {
        let tape = Tape::new();
        let p = self.params.bind(&tape);
        let x = tape.leaf(self.encode(states)?);
        let (logp, v) = self.forward(&p, x)?;
        let logp = logp.value();
        let a = self.n_actions();
        let rows = logp.data().chunks(a).map(|r| r.iter().map(|v| v.to_f64_lossy()).collect()).collect();
        let vals = v.value().data().iter().map(|v| v.to_f64_lossy()).collect();
        Ok((rows, vals))
    }

    /// Action probabilities for one state.
    pub fn probabilities(&self, state: &FactoredState) -> Result<Vec<f64>, TensorError> {
        let (logp, _) = self.evaluate(&[state])?;
        Ok(logp[0].iter().map(|l| l.exp()).collect())
    }
}

/// Draws an index from log-probabilities by inverse CDF.
pub(crate) fn sample_action(logp: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (a, l) in logp.iter().enumerate() {
        acc += l.exp();
        if u < acc {
            return a;
        }
    }
    logp.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::Factor;
    use rand::SeedableRng;

    #[test]
    fn initial_policy_is_uniform_and_normalised() {
        let schema = FactorSchema::new(vec![Factor::categorical("a", 3), Factor::real("b", 2)], 4).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let net = PolicyValueNet::<f64>::new(schema, &PpoConfig::default(), &mut rng);
        let s = FactoredState(vec![2.0, 0.5, -1.0]);
        let p = net.probabilities(&s).unwrap();
        assert!(p.iter().all(|&x| (x - 0.25).abs() < 1e-15));
        let mut flat = Vec::<f64>::new();
        flatten_state(net.schema(), &s, &mut flat);
        assert_eq!(flat, vec![0.0, 0.0, 1.0, 0.5, -1.0]);
    }

    #[test]
    fn sampling_follows_probabilities() {
        let logp = [0.1f64.ln(), 0.6f64.ln(), 0.3f64.ln()];
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut c = [0usize; 3];
        for _ in 0..20_000 {
            c[sample_action(&logp, &mut rng)] += 1;
        }
        assert!((c[1] as f64 / 20_000.0 - 0.6).abs() < 0.02);
    }
}
