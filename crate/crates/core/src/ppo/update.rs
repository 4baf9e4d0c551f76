use super::gae::normalize_advantages;
use super::net::PolicyValueNet;
use super::rollout::RolloutBatch;
use super::{PpoConfig, PpoError};
use crate::factored::{FactorSchema, FactoredState};
use crate::scalar::Scalar;
use crate::tensorcore::{Adam, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::Serialize;

/// Averages over the minibatches of one update.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// Mean `log π_old − log π_new` on the final epoch.
    pub approx_kl: f64,
    pub clip_fraction: f64,
    /// Largest `|ρ − 1|` on the first minibatch of the first epoch.
    pub first_ratio_dev: f64,
    pub minibatches: usize,
    pub skipped: usize,
}

/// One clipped-surrogate update: `epochs` passes over seeded shuffles of
/// the batch in minibatches, advantages normalised over the whole batch.
pub fn ppo_update<T: Scalar>(
    net: &mut PolicyValueNet<T>,
    adam: &mut Adam<T>,
    batch: &RolloutBatch,
    config: &PpoConfig,
    rng: &mut impl Rng,
) -> Result<UpdateStats, PpoError> {
    let n = batch.len();
    let mut stats = UpdateStats::default();
    if n == 0 {
        return Ok(stats);
    }
    let mut adv = batch.advantages.clone();
    normalize_advantages(&mut adv);
    let mut order: Vec<usize> = (0..n).collect();
    let mut counted = 0usize;
    let mut kl_sum = 0.0;
    let mut kl_n = 0usize;
    for epoch in 0..config.epochs {
        order.shuffle(rng);
        for (m, mb) in order.chunks(config.minibatch).enumerate() {
            let out = minibatch_step(net, adam, batch, &adv, mb, config)?;
            if epoch == 0 && m == 0 {
                stats.first_ratio_dev = out.ratio_dev;
            }
            if epoch + 1 == config.epochs {
                kl_sum += out.kl * mb.len() as f64;
                kl_n += mb.len();
            }
            stats.minibatches += 1;
            if out.skipped {
                stats.skipped += 1;
                continue;
            }
            counted += 1;
            stats.policy_loss += out.policy_loss;
            stats.value_loss += out.value_loss;
            stats.entropy += out.entropy;
            stats.clip_fraction += out.clip_fraction;
        }
    }
    if counted > 0 {
        let c = counted as f64;
        stats.policy_loss /= c;
        stats.value_loss /= c;
        stats.entropy /= c;
        stats.clip_fraction /= c;
    }
    stats.approx_kl = if kl_n > 0 { kl_sum / kl_n as f64 } else { 0.0 };
    Ok(stats)
}

struct MinibatchOut {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
    clip_fraction: f64,
    ratio_dev: f64,
    skipped: bool,
}

fn minibatch_step<T: Scalar>(
    net: &mut PolicyValueNet<T>,
    adam: &mut Adam<T>,
    batch: &RolloutBatch,
    adv: &[f64],
    mb: &[usize],
    config: &PpoConfig,
) -> Result<MinibatchOut, PpoError> {
    let b = mb.len();
    let a_n = net.n_actions();
    let col = |f: &dyn Fn(usize) -> f64| -> Result<Tensor<T>, PpoError> {
        Ok(Tensor::new(vec![b, 1], mb.iter().map(|&i| T::of(f(i))).collect())?)
    };
    let mut onehot = vec![T::zero(); b * a_n];
    for (r, &i) in mb.iter().enumerate() {
        onehot[r * a_n + batch.actions[i]] = T::one();
    }
    let states: Vec<&FactoredState> = mb.iter().map(|&i| &batch.states[i]).collect();

    let tape = Tape::new();
    let p = net.params().bind(&tape);
    let x = tape.leaf(net.encode(&states)?);
    let (logp, value) = net.forward(&p, x)?;
    let onehot = tape.leaf(Tensor::new(vec![b, a_n], onehot)?);
    let old = tape.leaf(col(&|i| batch.log_probs[i])?);
    let advantage = tape.leaf(col(&|i| adv[i])?);
    let ret = tape.leaf(col(&|i| batch.returns[i])?);

    let logp_a = logp.mul(onehot)?.sum_last()?;
    let ratio = logp_a.sub(old)?.exp();
    let c = config.clip;
    let surr = ratio
        .mul(advantage)?
        .minimum(ratio.clamp(Some(T::of(1.0 - c)), Some(T::of(1.0 + c))).mul(advantage)?)?;
    let policy_loss = surr.mean().scale(T::of(-1.0));
    let err = value.sub(ret)?;
    let mut value_loss = err.mul(err)?;
    if config.clip_value {
        let old_v = tape.leaf(col(&|i| batch.values[i])?);
        let clipped = value.sub(old_v)?.clamp(Some(T::of(-c)), Some(T::of(c))).add(old_v)?.sub(ret)?;
        // max(a, b) = −min(−a, −b)
        value_loss = value_loss
            .scale(T::of(-1.0))
            .minimum(clipped.mul(clipped)?.scale(T::of(-1.0)))?
            .scale(T::of(-1.0));
    }
    let value_loss = value_loss.mean();
    let entropy = logp.exp().mul(logp)?.sum_last()?.mean().scale(T::of(-1.0));
    let total = policy_loss
        .add(value_loss.scale(T::of(config.value_coef)))?
        .sub(entropy.scale(T::of(config.entropy_coef)))?;

    let ratios = ratio.value();
    let (mut dev, mut clipped, mut kl) = (0.0f64, 0usize, 0.0);
    for r in ratios.data() {
        let r = r.to_f64_lossy();
        dev = dev.max((r - 1.0).abs());
        clipped += usize::from((r - 1.0).abs() > c);
        kl -= r.ln();
    }
    let mut out = MinibatchOut {
        policy_loss: policy_loss.item().to_f64_lossy(),
        value_loss: value_loss.item().to_f64_lossy(),
        entropy: entropy.item().to_f64_lossy(),
        kl: kl / b as f64,
        clip_fraction: clipped as f64 / b as f64,
        ratio_dev: dev,
        skipped: !total.item().is_finite(),
    };
    if !out.skipped {
        let grads = tape.grad_values(total, p.vars())?;
        out.skipped = !adam.step(net.params_mut(), &grads);
    }
    Ok(out)
}

/// Policy, optimiser and the seeded stream for minibatch shuffling.
pub struct PpoAgent<T> {
    pub net: PolicyValueNet<T>,
    pub adam: Adam<T>,
    pub config: PpoConfig,
}

impl<T: Scalar> PpoAgent<T> {
    pub fn new(schema: FactorSchema, config: PpoConfig, rng: &mut impl Rng) -> Result<Self, PpoError> {
        config.validate().map_err(PpoError::Config)?;
        let net = PolicyValueNet::new(schema, &config, rng);
        let adam = Adam::new(net.params(), config.lr);
        Ok(Self { net, adam, config })
    }

    pub fn update(&mut self, batch: &RolloutBatch, rng: &mut impl Rng) -> Result<UpdateStats, PpoError> {
        ppo_update(&mut self.net, &mut self.adam, batch, &self.config, rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factored::Factor;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bandit_schema() -> FactorSchema {
        FactorSchema::new(vec![Factor::categorical("a", 2), Factor::categorical("b", 2)], 2).unwrap()
    }

    /// One-step episodes from a single state; action 0 pays 1.
    fn bandit_batch(net: &PolicyValueNet<f64>, n: usize, rng: &mut ChaCha8Rng) -> RolloutBatch {
        let s = FactoredState(vec![0.0, 0.0]);
        let (logp, v) = net.evaluate(&[&s]).unwrap();
        let mut b = RolloutBatch {
            envs: n,
            horizon: 1,
            ..RolloutBatch::default()
        };
        for _ in 0..n {
            let a = super::super::net::sample_action(&logp[0], rng);
            let r = if a == 0 { 1.0 } else { 0.0 };
            b.states.push(s.clone());
            b.actions.push(a);
            b.log_probs.push(logp[0][a]);
            b.values.push(v[0]);
            b.next_values.push(0.0);
            b.task_rewards.push(r);
            b.rewards.push(r);
            b.intrinsic.push(0.0);
            b.dones.push(true);
            b.ends.push(true);
        }
        b.compute_advantages(0.99, 0.98);
        b
    }

    #[test]
    fn bandit_converges_to_rewarded_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut agent = PpoAgent::<f64>::new(bandit_schema(), PpoConfig::default(), &mut rng).unwrap();
        let s = FactoredState(vec![0.0, 0.0]);
        let p_init = agent.net.probabilities(&s).unwrap()[0];
        let mut p = p_init;
        let mut reached = None;
        for u in 0..200 {
            let batch = bandit_batch(&agent.net, 64, &mut rng);
            agent.update(&batch, &mut rng).unwrap();
            p = agent.net.probabilities(&s).unwrap()[0];
            if u + 1 == 100 {
                assert!(p > p_init, "after 100 updates: {p} <= {p_init}");
            }
            if p >= 0.95 && reached.is_none() {
                reached = Some(u + 1);
            }
        }
        assert!(reached.is_some(), "final p(a=0) = {p}");
    }

    #[test]
    fn first_minibatch_ratios_are_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut agent = PpoAgent::<f64>::new(bandit_schema(), PpoConfig::default(), &mut rng).unwrap();
        for _ in 0..3 {
            let batch = bandit_batch(&agent.net, 64, &mut rng);
            let st = agent.update(&batch, &mut rng).unwrap();
            assert!(st.first_ratio_dev <= 1e-10, "{}", st.first_ratio_dev);
            assert_eq!(st.minibatches, 20);
        }
    }

    #[test]
    fn zero_advantages_leave_policy_untouched() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut agent = PpoAgent::<f64>::new(bandit_schema(), PpoConfig::default(), &mut rng).unwrap();
        let mut batch = bandit_batch(&agent.net, 64, &mut rng);
        batch.advantages.iter_mut().for_each(|a| *a = 0.0);
        batch.returns.iter_mut().for_each(|r| *r = 5.0);
        let before = agent.net.params().clone();
        agent.update(&batch, &mut rng).unwrap();
        let mut value_moved = false;
        for ((name, a), (_, b)) in before.iter().zip(agent.net.params().iter()) {
            if name.starts_with("pi") {
                assert_eq!(a.data(), b.data(), "{name}");
            } else {
                value_moved |= a.data() != b.data();
            }
        }
        assert!(value_moved);
    }

    #[test]
    fn update_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let mut agent = PpoAgent::<f64>::new(bandit_schema(), PpoConfig::default(), &mut rng).unwrap();
            let batch = bandit_batch(&agent.net, 50, &mut rng);
            let st = agent.update(&batch, &mut rng).unwrap();
            (st, agent.net.params().tensors().to_vec())
        };
        assert_eq!(run(), run());
    }
}
