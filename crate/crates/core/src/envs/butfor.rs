//! Counterfactual ("but-for") soundness check of ground-truth graphs.
//!
//! A step is replayed with one factor set to every other value of its
//! domain. If output factor `j` changes, the recorded graph must contain
//! `i → j`. The action selects the rule and is not perturbed.

use super::grid::DiscreteDynamics;
use super::{scripted_collect, EnvError, FactoredEnv};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub state: Vec<usize>,
    pub action: usize,
    pub factor: usize,
    pub value: usize,
    pub target: usize,
}

/// All violations at `(state, action)`.
pub fn check_but_for(dynamics: &dyn DiscreteDynamics, state: &[usize], action: usize) -> Vec<Violation> {
    let (next, graph) = dynamics.transition(state, action);
    let mut out = Vec::new();
    let mut alt = state.to_vec();
    for (i, &classes) in dynamics.domains().iter().enumerate() {
        for v in (0..classes).filter(|&v| v != state[i]) {
            alt[i] = v;
            let (n2, _) = dynamics.transition(&alt, action);
            for j in (0..next.len()).filter(|&j| n2[j] != next[j] && !graph.get(i, j)) {
                out.push(Violation {
                    state: state.to_vec(),
                    action,
                    factor: i,
                    value: v,
                    target: j,
                });
            }
        }
        alt[i] = state[i];
    }
    out
}

/// `n` transitions `(state, action)` drawn from scripted-policy data.
pub fn random_transitions(env: &mut dyn FactoredEnv, n: usize, seed: u64) -> Result<Vec<(Vec<usize>, usize)>, EnvError> {
    let (data, _) = scripted_collect(env, 4 * n, seed)?;
    let mut picked: Vec<_> = data
        .records
        .iter()
        .map(|r| (r.state.0.iter().map(|&v| v as usize).collect(), r.action))
        .collect();
    picked.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    picked.truncate(n);
    Ok(picked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{make_env, GridConfig};
    use crate::factored::EdgeMask;

    /// A deliberately wrong world: writes factor 1 from factor 0 without recording it.
    struct Leaky;
    impl DiscreteDynamics for Leaky {
        fn domains(&self) -> Vec<usize> {
            vec![2, 2]
        }
        fn n_actions(&self) -> usize {
            1
        }
        fn transition(&self, s: &[usize], _: usize) -> (Vec<usize>, EdgeMask) {
            let mut g = EdgeMask::empty(2);
            g.set(0, 0, true);
            (vec![s[0], s[0]], g)
        }
    }

    #[test]
    fn detects_unrecorded_dependency() {
        let v = check_but_for(&Leaky, &[0, 0], 0);
        assert_eq!(v.len(), 1);
        assert_eq!((v[0].factor, v[0].target), (0, 1));
    }

    #[test]
    fn grid_worlds_are_sound_on_sampled_steps() {
        for name in ["thawing", "carwash", "minecraft2d"] {
            let mut e = make_env(name, GridConfig::default()).unwrap();
            let steps = random_transitions(e.as_mut(), 100, 1).unwrap();
            let d = e.discrete().unwrap();
            for (s, a) in steps {
                let v = check_but_for(d, &s, a);
                assert!(v.is_empty(), "{name}: {:?}", v[0]);
            }
        }
    }
}
