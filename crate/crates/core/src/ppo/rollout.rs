use super::gae::gae;
use super::net::{sample_action, PolicyValueNet};
use super::PpoError;
use crate::envs::FactoredEnv;
use crate::explore::{combine, intrinsic_rewards, DynamicsEnsemble, RewardConfig};
use crate::factored::{FactoredState, TransitionRecord};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use rand::Rng;
use serde::Serialize;

/// Outcome of one finished episode.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpisodeStats {
    pub env: usize,
    pub task_return: f64,
    pub length: usize,
    pub success: bool,
    pub normalized_stage: f64,
}

/// Parallel environment instances stepped in lockstep. Instance `e`
/// resets its `k`-th episode from `derive_seed(derive_seed(seed, "env", e), "reset", k)`.
pub struct EnvPool {
    envs: Vec<Box<dyn FactoredEnv>>,
    states: Vec<FactoredState>,
    env_seeds: Vec<u64>,
    episodes: Vec<u64>,
    returns: Vec<f64>,
    lengths: Vec<usize>,
}

impl EnvPool {
    pub fn new(prototype: &dyn FactoredEnv, n: usize, seed: u64) -> Self {
        assert!(n >= 1, "need at least one environment");
        let mut envs: Vec<_> = (0..n).map(|_| prototype.boxed_clone()).collect();
        let env_seeds: Vec<u64> = (0..n).map(|e| derive_seed(seed, "env", e as u64)).collect();
        let states = envs
            .iter_mut()
            .zip(&env_seeds)
            .map(|(env, &s)| env.reset(derive_seed(s, "reset", 0)))
            .collect();
        Self {
            envs,
            states,
            env_seeds,
            episodes: vec![1; n],
            returns: vec![0.0; n],
            lengths: vec![0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.envs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.envs.is_empty()
    }

    pub fn env(&self, e: usize) -> &dyn FactoredEnv {
        self.envs[e].as_ref()
    }

    pub fn states(&self) -> &[FactoredState] {
        &self.states
    }

    fn restart(&mut self, e: usize) {
        let s = derive_seed(self.env_seeds[e], "reset", self.episodes[e]);
        self.episodes[e] += 1;
        self.states[e] = self.envs[e].reset(s);
        self.returns[e] = 0.0;
        self.lengths[e] = 0;
    }
}

/// On-policy storage; step `t` of env `e` sits at index `t * envs + e`.
#[derive(Clone, Debug, Default)]
pub struct RolloutBatch {
    pub envs: usize,
    pub horizon: usize,
    pub states: Vec<FactoredState>,
    pub actions: Vec<usize>,
    pub log_probs: Vec<f64>,
    pub values: Vec<f64>,
    /// `V(s_{t+1})`; zero after termination, the bootstrap value after truncation.
    pub next_values: Vec<f64>,
    pub task_rewards: Vec<f64>,
    pub intrinsic: Vec<f64>,
    /// Combined reward the learner optimises.
    pub rewards: Vec<f64>,
    pub dones: Vec<bool>,
    /// An episode boundary (done) or the end of the rollout follows this step.
    pub ends: Vec<bool>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Transitions with task reward, for the dynamics replay buffer.
    pub records: Vec<TransitionRecord>,
    pub episodes: Vec<EpisodeStats>,
    /// Transitions whose intrinsic reward was non-finite and set to zero.
    pub flagged: u64,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Fills `advantages` and `returns` env by env; `ends` cut the recursion.
    pub fn compute_advantages(&mut self, gamma: f64, lambda: f64) {
        let (e_n, h) = (self.envs, self.horizon);
        self.advantages = vec![0.0; e_n * h];
        self.returns = vec![0.0; e_n * h];
        for e in 0..e_n {
            let idx: Vec<usize> = (0..h).map(|t| t * e_n + e).collect();
            let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
            let ends: Vec<bool> = idx.iter().map(|&i| self.ends[i]).collect();
            let (a, r) = gae(&pick(&self.rewards), &pick(&self.values), &pick(&self.next_values), &ends, gamma, lambda);
            for (k, &i) in idx.iter().enumerate() {
                self.advantages[i] = a[k];
                self.returns[i] = r[k];
            }
        }
    }
}

/// Steps every env `horizon` times under `net`, then scores the whole batch
/// with the frozen ensemble and computes advantages.
pub fn collect_rollouts<T: Scalar, U: Scalar>(
    net: &PolicyValueNet<T>,
    pool: &mut EnvPool,
    reward: &RewardConfig,
    ensemble: Option<&DynamicsEnsemble<U>>,
    horizon: usize,
    gamma: f64,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<RolloutBatch, PpoError> {
    let e_n = pool.len();
    let mut b = RolloutBatch {
        envs: e_n,
        horizon,
        ..RolloutBatch::default()
    };
    // (batch index, state) pairs needing a bootstrap value
    let mut bootstrap: Vec<(usize, FactoredState)> = Vec::new();
    for t in 0..horizon {
        let refs: Vec<&FactoredState> = pool.states.iter().collect();
        let (logp, values) = net.evaluate(&refs)?;
        for e in 0..e_n {
            let a = sample_action(&logp[e], rng);
            let state = pool.states[e].clone();
            let step = pool.envs[e].step(a).map_err(|source| PpoError::Env { env: e, source })?;
            pool.returns[e] += step.reward;
            pool.lengths[e] += 1;
            let i = b.actions.len();
            b.states.push(state.clone());
            b.actions.push(a);
            b.log_probs.push(logp[e][a]);
            b.values.push(values[e]);
            b.task_rewards.push(step.reward);
            b.dones.push(step.done);
            b.ends.push(step.done || t + 1 == horizon);
            b.next_values.push(0.0);
            if step.truncated || (!step.done && t + 1 == horizon) {
                bootstrap.push((i, step.next.clone()));
            }
            b.records.push(TransitionRecord {
                state,
                action: a,
                next: step.next.clone(),
                reward: step.reward,
                done: step.done,
                graph: step.graph,
                stage: step.stage,
            });
            if step.done {
                b.episodes.push(EpisodeStats {
                    env: e,
                    task_return: pool.returns[e],
                    length: pool.lengths[e],
                    success: step.done && !step.truncated,
                    normalized_stage: pool.envs[e].normalized_stage(),
                });
                pool.restart(e);
            } else {
                pool.states[e] = step.next;
            }
        }
    }
    // within-rollout successors: V(s_{t+1}) is the next recorded value
    for i in 0..b.len() {
        if !b.ends[i] {
            b.next_values[i] = b.values[i + e_n];
        }
    }
    if !bootstrap.is_empty() {
        let refs: Vec<&FactoredState> = bootstrap.iter().map(|(_, s)| s).collect();
        let (_, v) = net.evaluate(&refs)?;
        for ((i, _), v) in bootstrap.iter().zip(v) {
            b.next_values[*i] = v;
        }
    }
    let recs: Vec<&TransitionRecord> = b.records.iter().collect();
    let intr = intrinsic_rewards(ensemble, &recs, reward)?;
    b.flagged = intr.flagged;
    b.rewards = b.task_rewards.iter().zip(&intr.rewards).map(|(&r, &i)| combine(r, i, reward.beta)).collect();
    b.intrinsic = intr.rewards;
    b.compute_advantages(gamma, lambda);
    Ok(b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, GridConfig};
    use crate::explore::IntrinsicKind;
    use crate::ppo::PpoConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (PolicyValueNet<f64>, EnvPool) {
        let env = make_env("thawing", GridConfig { size: 5, ..GridConfig::default() }).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = PpoConfig {
            hidden: vec![16, 16],
            ..PpoConfig::default()
        };
        let net = PolicyValueNet::new(env.schema().clone(), &cfg, &mut rng);
        (net, EnvPool::new(env.as_ref(), 3, seed))
    }

    fn vanilla() -> RewardConfig {
        RewardConfig {
            kind: IntrinsicKind::None,
            beta: 0.0,
            ..RewardConfig::default()
        }
    }

    #[test]
    fn batch_shape_rewards_and_log_probs() {
        let (net, mut pool) = setup(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = collect_rollouts::<f64, f64>(&net, &mut pool, &vanilla(), None, 45, 0.99, 0.98, &mut rng).unwrap();
        assert_eq!(b.len(), 3 * 45);
        assert_eq!(b.rewards, b.task_rewards);
        // 20-step episodes: every env finishes twice
        assert_eq!(b.episodes.len(), 6);
        let refs: Vec<&FactoredState> = b.states.iter().collect();
        let (logp, v) = net.evaluate(&refs).unwrap();
        for i in 0..b.len() {
            assert!((logp[i][b.actions[i]] - b.log_probs[i]).abs() <= 1e-12);
            assert!((v[i] - b.values[i]).abs() <= 1e-12);
        }
        for i in 0..b.len() {
            if b.dones[i] && !b.task_rewards[i].eq(&1.0) {
                // truncated: bootstrap, not zero
                assert_ne!(b.next_values[i], 0.0);
            }
            assert!((b.returns[i] - b.advantages[i] - b.values[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn rollouts_are_reproducible() {
        let run = || {
            let (net, mut pool) = setup(9);
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let b = collect_rollouts::<f64, f64>(&net, &mut pool, &vanilla(), None, 30, 0.99, 0.98, &mut rng).unwrap();
            (b.actions, b.advantages, b.episodes)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn intrinsic_kind_without_ensemble_is_rejected() {
        let (net, mut pool) = setup(0);
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let r = collect_rollouts::<f64, f64>(&net, &mut pool, &cfg, None, 2, 0.99, 0.98, &mut rng);
        assert!(matches!(r, Err(PpoError::Intrinsic(_))));
    }
}
