//! Linear-Gaussian system with a known global dependency mask:
//! `s' = (M ⊙ W) s + b + σ ε`.
//!
//! The local graph of a step keeps the masked edges whose contribution
//! `|W_ji s_i|` is above machine precision. The single action is a no-op,
//! so the action row is always empty.

use super::{EnvError, FactoredEnv, Step};
use crate::factored::{EdgeMask, Factor, FactorSchema, FactoredState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SyntheticConfig {
    pub n: usize,
    /// Probability that a given `i → j` edge is in the mask.
    pub density: f64,
    pub noise: f64,
    pub episode_len: usize,
    /// Seed of the generator (mask, weights, bias).
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n: 10,
            density: 0.3,
            noise: 0.1,
            episode_len: 50,
            seed: 0,
        }
    }
}

/// Bound on `Σ_i |W_ji|`, which keeps the system contractive.
const ROW_L1: f64 = 0.9;

#[derive(Clone, Debug)]
pub struct SyntheticLinearEnv {
    schema: FactorSchema,
    /// `weights[j][i]`, already multiplied by the mask.
    weights: Vec<Vec<f64>>,
    mask: Vec<Vec<bool>>,
    bias: Vec<f64>,
    noise: f64,
    episode_len: usize,
    state: FactoredState,
    rng: ChaCha8Rng,
    t: usize,
    started: bool,
}

impl SyntheticLinearEnv {
    pub fn new(config: SyntheticConfig) -> Self {
        assert!(config.n >= 2, "need at least 2 factors");
        assert!(config.density > 0.0 && config.density < 1.0, "density must lie in (0, 1)");
        let n = config.n;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mask: Vec<Vec<bool>> = (0..n).map(|_| (0..n).map(|_| rng.random_bool(config.density)).collect()).collect();
        let mut weights = vec![vec![0.0f64; n]; n];
        for j in 0..n {
            for i in 0..n {
                if mask[j][i] {
                    let mag = rng.random_range(0.3..1.0);
                    weights[j][i] = if rng.random_bool(0.5) { mag } else { -mag };
                }
            }
            let l1: f64 = weights[j].iter().map(|w: &f64| w.abs()).sum();
            if l1 > ROW_L1 {
                weights[j].iter_mut().for_each(|w| *w *= ROW_L1 / l1);
            }
        }
        let bias = (0..n).map(|_| rng.random_range(-0.5..0.5)).collect();
        Self::from_parts(weights, mask, bias, config.noise, config.episode_len)
    }

    /// Explicit system; `mask[j][i]` marks input `i` → target `j`.
    pub fn from_parts(weights: Vec<Vec<f64>>, mask: Vec<Vec<bool>>, bias: Vec<f64>, noise: f64, episode_len: usize) -> Self {
        let n = bias.len();
        assert!(weights.len() == n && mask.len() == n);
        let weights = weights
            .iter()
            .zip(&mask)
            .map(|(w, m)| w.iter().zip(m).map(|(&w, &m)| if m { w } else { 0.0 }).collect())
            .collect();
        let factors = (0..n).map(|i| Factor::real(&format!("x{i}"), 1)).collect();
        Self {
            schema: FactorSchema::new(factors, 1).expect("n >= 2"),
            weights,
            mask,
            bias,
            noise,
            episode_len,
            state: FactoredState(vec![0.0; n]),
            rng: ChaCha8Rng::seed_from_u64(0),
            t: 0,
            started: false,
        }
    }

    /// Global mask as an edge mask (action row empty).
    pub fn global_mask(&self) -> EdgeMask {
        let n = self.bias.len();
        let mut g = EdgeMask::empty(n);
        for j in 0..n {
            for i in 0..n {
                g.set(i, j, self.mask[j][i]);
            }
        }
        g
    }

    pub fn weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Local graph at `state`.
    pub fn local_graph(&self, state: &[f64]) -> EdgeMask {
        let n = self.bias.len();
        let mut g = EdgeMask::empty(n);
        for j in 0..n {
            for i in 0..n {
                g.set(i, j, self.mask[j][i] && (self.weights[j][i] * state[i]).abs() > f64::EPSILON);
            }
        }
        g
    }

    /// Places the env in `state` mid-episode.
    pub fn set_state(&mut self, state: Vec<f64>, seed: u64) {
        self.state = FactoredState(state);
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.t = 0;
        self.started = true;
    }
}

impl FactoredEnv for SyntheticLinearEnv {
    fn name(&self) -> &str {
        "synthetic"
    }

    fn schema(&self) -> &FactorSchema {
        &self.schema
    }

    fn max_steps(&self) -> usize {
        self.episode_len
    }

    fn grid_size(&self) -> Option<usize> {
        None
    }

    fn action_names(&self) -> Vec<String> {
        vec!["noop".into()]
    }

    fn rule_names(&self) -> Vec<String> {
        vec!["linear".into()]
    }

    fn stage_names(&self) -> Vec<String> {
        Vec::new()
    }

    fn reset(&mut self, seed: u64) -> FactoredState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..self.bias.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
        self.set_state(s, rng.random());
        self.state.clone()
    }

    fn state(&self) -> &FactoredState {
        &self.state
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.t >= self.episode_len {
            return Err(EnvError::EpisodeOver);
        }
        if action != 0 {
            return Err(EnvError::InvalidAction { action, actions: 1 });
        }
        let s = &self.state.0;
        let graph = self.local_graph(s);
        let next: Vec<f64> = (0..s.len())
            .map(|j| {
                let lin: f64 = self.weights[j].iter().zip(s).map(|(w, x)| w * x).sum();
                let eps: f64 = StandardNormal.sample(&mut self.rng);
                lin + self.bias[j] + self.noise * eps
            })
            .collect();
        self.state = FactoredState(next);
        self.t += 1;
        Ok(Step {
            next: self.state.clone(),
            reward: 0.0,
            done: self.t >= self.episode_len,
            truncated: self.t >= self.episode_len,
            graph,
            stage: 0,
            fired: Some(0),
        })
    }

    fn stage(&self) -> usize {
        0
    }

    fn n_stages(&self) -> usize {
        0
    }

    fn scripted_action(&self) -> usize {
        0
    }

    fn boxed_clone(&self) -> Box<dyn FactoredEnv> {
        Box::new(self.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(n: usize) -> SyntheticLinearEnv {
        let w = (0..n).map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect()).collect();
        let m = (0..n).map(|j| (0..n).map(|i| i == j).collect()).collect();
        SyntheticLinearEnv::from_parts(w, m, vec![0.0; n], 0.0, 10)
    }

    #[test]
    fn identity_copies_and_depends_on_itself() {
        let mut e = identity(3);
        let s0 = e.reset(4);
        let st = e.step(0).unwrap();
        assert_eq!(st.next, s0);
        for j in 0..3 {
            for i in 0..=3 {
                assert_eq!(st.graph.get(i, j), i == j);
            }
        }
    }

    #[test]
    fn zero_weights_leave_only_bias() {
        let n = 3;
        let m = vec![vec![true; n]; n];
        let mut e = SyntheticLinearEnv::from_parts(vec![vec![0.0; n]; n], m, vec![0.5, -1.0, 2.0], 0.0, 10);
        e.reset(1);
        let st = e.step(0).unwrap();
        assert_eq!(st.next.0, vec![0.5, -1.0, 2.0]);
        assert_eq!(st.graph.count(), 0);
    }

    #[test]
    fn generated_system_is_contractive_and_matches_density() {
        let e = SyntheticLinearEnv::new(SyntheticConfig { n: 40, ..Default::default() });
        for row in e.weights() {
            assert!(row.iter().map(|w| w.abs()).sum::<f64>() <= ROW_L1 + 1e-12);
        }
        let density = e.global_mask().count() as f64 / 1600.0;
        assert!((density - 0.3).abs() < 0.05, "{density}");
    }

    #[test]
    fn episodes_end_and_reset_is_deterministic() {
        let mut e = SyntheticLinearEnv::new(SyntheticConfig::default());
        let a = e.reset(9);
        let traj: Vec<_> = (0..50).map(|_| e.step(0).unwrap()).collect();
        assert!(traj[49].done && !traj[48].done);
        assert_eq!(e.step(0), Err(EnvError::EpisodeOver));
        assert_eq!(e.reset(9), a);
        assert_eq!(e.step(0).unwrap(), traj[0]);
    }
}
