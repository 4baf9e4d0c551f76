//! Grid geometry and the generic driver shared by the discrete worlds.
//!
//! Every entity sits on a cell of a `size × size` grid, encoded row-major as a
//! categorical factor with `size²` classes. The agent reaches an entity with a
//! single `goTo` primitive that places it on a fixed side of the entity, facing
//! it. Interactions act on the cell in front of the agent.

use super::rules::{Reader, Tracker};
use super::{EnvError, FactoredEnv, StageTracker, Step};
use crate::factored::{EdgeMask, FactorSchema, FactoredState};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const NORTH: usize = 0;
pub const EAST: usize = 1;
pub const SOUTH: usize = 2;
pub const WEST: usize = 3;

pub fn opposite(dir: usize) -> usize {
    (dir + 2) % 4
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Grid {
    pub size: usize,
}

impl Grid {
    pub fn cells(&self) -> usize {
        self.size * self.size
    }

    pub fn xy(&self, cell: usize) -> (usize, usize) {
        (cell % self.size, cell / self.size)
    }

    pub fn cell(&self, x: usize, y: usize) -> usize {
        y * self.size + x
    }

    /// Neighbour of `cell` in direction `dir`, if it lies on the grid.
    pub fn step(&self, cell: usize, dir: usize) -> Option<usize> {
        let (x, y) = self.xy(cell);
        match dir {
            NORTH if y > 0 => Some(self.cell(x, y - 1)),
            SOUTH if y + 1 < self.size => Some(self.cell(x, y + 1)),
            WEST if x > 0 => Some(self.cell(x - 1, y)),
            EAST if x + 1 < self.size => Some(self.cell(x + 1, y)),
            _ => None,
        }
    }
}

/// Discrete-world settings shared by the grid environments.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub size: usize,
    /// Keep layouts where some entity cannot be approached, which can make
    /// the task impossible. Off by default: such layouts are redrawn.
    pub allow_blocked_layouts: bool,
    /// Overrides the world's default episode length.
    pub max_steps: Option<usize>,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            size: 10,
            allow_blocked_layouts: false,
            max_steps: None,
        }
    }
}

/// A rule-based world on a grid; all factors are categorical.
pub trait GridWorld: Clone + Send + Sync + 'static {
    fn name(&self) -> &'static str;
    fn schema(&self) -> &FactorSchema;
    fn grid(&self) -> Grid;
    fn default_max_steps(&self) -> usize;
    fn action_names(&self) -> &'static [&'static str];
    /// Factors the rule of `action` may assign.
    fn writes(&self, action: usize) -> &'static [usize];
    /// Evaluates the rule of `action`.
    fn apply(&self, action: usize, t: &mut Tracker);
    /// Draws an initial state; the driver rejects it if `approachable` fails.
    fn sample_layout(&self, rng: &mut ChaCha8Rng) -> Vec<usize>;
    /// Whether every entity in `state` can be reached.
    fn approachable(&self, state: &[usize]) -> bool;
    fn stage_names(&self) -> &'static [&'static str];
    fn stage_reached(&self, stage: usize, state: &[usize]) -> bool;
    /// Next stage-advancing primitive.
    fn scripted(&self, state: &[usize]) -> usize;
}

/// Pure transition: next state, its ground-truth graph, and whether every guard held.
pub fn transition<W: GridWorld>(world: &W, state: &[usize], action: usize) -> (Vec<usize>, EdgeMask, bool) {
    let mut t = Tracker::new(state, world.writes(action));
    world.apply(action, &mut t);
    let fired = t.fired();
    let (next, graph) = t.finish();
    (next, graph, fired)
}

/// The cell the agent faces, from its position and direction factors.
pub fn front(grid: Grid, r: &Reader, pos: usize, dir: usize) -> Option<usize> {
    grid.step(r.get(pos), r.get(dir))
}

/// Whether the agent faces the entity at factor `target`; the target is
/// only read when the front cell exists.
pub fn facing(grid: Grid, r: &Reader, pos: usize, dir: usize, target: usize) -> bool {
    front(grid, r, pos, dir).is_some_and(|c| c == r.get(target))
}

/// `goTo(entity)`: stand on `side` of the entity, facing it. When that cell
/// is off the grid the agent stays where it is but still turns.
pub fn go_to(grid: Grid, t: &mut Tracker, agent_pos: usize, agent_dir: usize, target: usize, side: usize) {
    t.set(agent_pos, |r| grid.step(r.get(target), side).unwrap_or_else(|| r.get(agent_pos)));
    t.set(agent_dir, |_| opposite(side));
}

/// Distinct random cells for `k` entities.
pub fn distinct_cells(grid: Grid, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, grid.cells(), k).into_vec()
}

/// Whether each `(cell, side)` approach lands on the grid and off every cell in `occupied`.
pub fn approaches_free(grid: Grid, approaches: &[(usize, usize)], occupied: &[usize]) -> bool {
    approaches
        .iter()
        .all(|&(cell, side)| grid.step(cell, side).is_some_and(|a| !occupied.contains(&a)))
}

/// [`FactoredEnv`] driver around a [`GridWorld`].
#[derive(Clone)]
pub struct GridEnv<W: GridWorld> {
    world: W,
    config: GridConfig,
    state: Vec<usize>,
    obs: FactoredState,
    tracker: StageTracker,
    t: usize,
    done: bool,
    started: bool,
}

const LAYOUT_ATTEMPTS: usize = 10_000;

impl<W: GridWorld> GridEnv<W> {
    pub fn new(world: W, config: GridConfig) -> Self {
        let n = world.schema().n_factors();
        let stages = world.stage_names().len();
        Self {
            world,
            config,
            state: vec![0; n],
            obs: FactoredState(vec![0.0; n]),
            tracker: StageTracker::new(stages),
            t: 0,
            done: false,
            started: false,
        }
    }

    pub fn world(&self) -> &W {
        &self.world
    }

    pub fn classes(&self) -> &[usize] {
        &self.state
    }

    /// Places the env in `state` mid-episode (tests and replay).
    pub fn set_state(&mut self, state: Vec<usize>) {
        self.obs = to_obs(&state);
        self.state = state;
        self.started = true;
        self.done = false;
    }

    fn refresh_stage(&mut self) {
        let (world, state) = (&self.world, &self.state);
        self.tracker.observe(|k| world.stage_reached(k, state));
    }
}

fn to_obs(state: &[usize]) -> FactoredState {
    FactoredState(state.iter().map(|&c| c as f64).collect())
}

impl<W: GridWorld> FactoredEnv for GridEnv<W> {
    fn name(&self) -> &str {
        self.world.name()
    }

    fn schema(&self) -> &FactorSchema {
        self.world.schema()
    }

    fn max_steps(&self) -> usize {
        self.config.max_steps.unwrap_or(self.world.default_max_steps())
    }

    fn grid_size(&self) -> Option<usize> {
        Some(self.config.size)
    }

    fn action_names(&self) -> Vec<String> {
        self.world.action_names().iter().map(|s| s.to_string()).collect()
    }

    fn rule_names(&self) -> Vec<String> {
        self.action_names()
    }

    fn stage_names(&self) -> Vec<String> {
        self.world.stage_names().iter().map(|s| s.to_string()).collect()
    }

    fn reset(&mut self, seed: u64) -> FactoredState {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut state = self.world.sample_layout(&mut rng);
        if !self.config.allow_blocked_layouts {
            let mut tries = 1;
            while !self.world.approachable(&state) {
                assert!(tries < LAYOUT_ATTEMPTS, "no approachable layout found");
                state = self.world.sample_layout(&mut rng);
                tries += 1;
            }
        }
        self.state = state;
        self.obs = to_obs(&self.state);
        self.tracker.reset();
        self.refresh_stage();
        self.t = 0;
        self.done = false;
        self.started = true;
        self.obs.clone()
    }

    fn state(&self) -> &FactoredState {
        &self.obs
    }

    fn step(&mut self, action: usize) -> Result<Step, EnvError> {
        if !self.started {
            return Err(EnvError::NotReset);
        }
        if self.done {
            return Err(EnvError::EpisodeOver);
        }
        let n_actions = self.world.action_names().len();
        if action >= n_actions {
            return Err(EnvError::InvalidAction { action, actions: n_actions });
        }
        let (next, graph, fired) = transition(&self.world, &self.state, action);
        self.state = next;
        self.obs = to_obs(&self.state);
        self.t += 1;
        let before = self.tracker.reached();
        self.refresh_stage();
        let success = self.tracker.complete() && before < self.tracker.total();
        self.done = success || self.t >= self.max_steps();
        Ok(Step {
            next: self.obs.clone(),
            reward: if success { 1.0 } else { 0.0 },
            done: self.done,
            truncated: self.done && !success,
            graph,
            stage: self.tracker.reached(),
            fired: fired.then_some(action),
        })
    }

    fn stage(&self) -> usize {
        self.tracker.reached()
    }

    fn n_stages(&self) -> usize {
        self.tracker.total()
    }

    fn scripted_action(&self) -> usize {
        self.world.scripted(&self.state)
    }

    fn discrete(&self) -> Option<&dyn DiscreteDynamics> {
        Some(self)
    }

    fn boxed_clone(&self) -> Box<dyn FactoredEnv> {
        Box::new(self.clone())
    }
}

/// Deterministic categorical dynamics exposed for counterfactual replay.
pub trait DiscreteDynamics {
    /// Class count of each factor.
    fn domains(&self) -> Vec<usize>;
    fn n_actions(&self) -> usize;
    fn transition(&self, state: &[usize], action: usize) -> (Vec<usize>, EdgeMask);
}

impl<W: GridWorld> DiscreteDynamics for GridEnv<W> {
    fn domains(&self) -> Vec<usize> {
        let s = self.world.schema();
        (0..s.n_factors()).map(|i| s.input_dim(i)).collect()
    }

    fn n_actions(&self) -> usize {
        self.world.action_names().len()
    }

    fn transition(&self, state: &[usize], action: usize) -> (Vec<usize>, EdgeMask) {
        let (next, graph, _) = transition(&self.world, state, action);
        (next, graph)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn steps_stay_on_grid() {
        let g = Grid { size: 3 };
        assert_eq!(g.step(0, NORTH), None);
        assert_eq!(g.step(0, WEST), None);
        assert_eq!(g.step(0, EAST), Some(1));
        assert_eq!(g.step(0, SOUTH), Some(3));
        assert_eq!(g.step(8, SOUTH), None);
        assert_eq!(g.step(8, EAST), None);
        assert_eq!(g.step(4, NORTH), Some(1));
        assert_eq!(opposite(NORTH), SOUTH);
        assert_eq!(opposite(WEST), EAST);
    }
}
