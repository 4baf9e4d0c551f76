//! Factored environments with ground-truth local dependency graphs.
//!
//! The discrete worlds are desk-scale re-implementations of household and
//! crafting tasks. Dynamics are written as guarded rules evaluated through a
//! read-tracking context ([`rules::Tracker`]), so the graph recorded on each
//! step lists exactly the factors the fired rule looked at. All worlds pay a
//! reward of 1 only on task completion; semantic stages are tracked for
//! reporting and never enter a reward.

pub mod butfor;
pub mod carwash;
pub mod collect;
pub mod dataset;
pub mod grid;
pub mod minecraft;
pub mod rules;
pub mod synthetic;
pub mod thawing;

pub use butfor::{check_but_for, random_transitions, Violation};
pub use carwash::CarWash;
pub use collect::{scripted_collect, scripted_collect_eps, scripted_episodes, CollectStats, Dataset, SCRIPTED_EPSILON};
pub use dataset::{read_dataset, write_dataset, DatasetError, DatasetHeader};
pub use grid::{DiscreteDynamics, GridConfig, GridEnv, GridWorld};
pub use minecraft::Minecraft2d;
pub use synthetic::{SyntheticConfig, SyntheticLinearEnv};
pub use thawing::Thawing;

use crate::factored::{EdgeMask, FactorSchema, FactoredState};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("action {action} out of range (env has {actions})")]
    InvalidAction { action: usize, actions: usize },
    #[error("step called before reset")]
    NotReset,
    #[error("step called after the episode ended")]
    EpisodeOver,
    #[error("unknown environment {0:?} (expected thawing, carwash, minecraft2d or synthetic)")]
    UnknownEnv(String),
    #[error("invalid environment config: {0}")]
    Config(String),
}

/// Result of one environment step.
#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub next: FactoredState,
    /// 1 on the step that completes the task, else 0.
    pub reward: f64,
    pub done: bool,
    /// The episode ended on the step limit rather than by completing the task.
    pub truncated: bool,
    pub graph: EdgeMask,
    /// Highest stage reached so far this episode.
    pub stage: usize,
    /// Rule that fired (all guards held), as an index into `rule_names`.
    pub fired: Option<usize>,
}

pub trait FactoredEnv: Send {
    fn name(&self) -> &str;
    fn schema(&self) -> &FactorSchema;
    fn max_steps(&self) -> usize;
    /// Side length for grid worlds.
    fn grid_size(&self) -> Option<usize>;
    fn action_names(&self) -> Vec<String>;
    fn rule_names(&self) -> Vec<String>;
    fn stage_names(&self) -> Vec<String>;
    /// Starts a new episode; the same seed gives the same initial state.
    fn reset(&mut self, seed: u64) -> FactoredState;
    fn state(&self) -> &FactoredState;
    fn step(&mut self, action: usize) -> Result<Step, EnvError>;
    fn stage(&self) -> usize;
    fn n_stages(&self) -> usize;
    /// Stage reached so far as a fraction of all stages.
    fn normalized_stage(&self) -> f64 {
        match self.n_stages() {
            0 => 0.0,
            n => self.stage() as f64 / n as f64,
        }
    }
    /// The next primitive of the hand-written task solution.
    fn scripted_action(&self) -> usize;
    /// Exact categorical dynamics, when the env has them.
    fn discrete(&self) -> Option<&dyn DiscreteDynamics> {
        None
    }
    fn boxed_clone(&self) -> Box<dyn FactoredEnv>;
}

/// Ordered semantic milestones; a stage counts once it and all earlier
/// stages have held at some point in the episode.
#[derive(Clone, Debug, PartialEq)]
pub struct StageTracker {
    seen: Vec<bool>,
    reached: usize,
}

impl StageTracker {
    pub fn new(total: usize) -> Self {
        Self {
            seen: vec![false; total],
            reached: 0,
        }
    }

    pub fn reset(&mut self) {
        self.seen.iter_mut().for_each(|s| *s = false);
        self.reached = 0;
    }

    /// Latches every stage whose predicate holds now.
    pub fn observe(&mut self, holds: impl Fn(usize) -> bool) {
        for k in 0..self.seen.len() {
            if !self.seen[k] && holds(k) {
                self.seen[k] = true;
            }
        }
        while self.reached < self.seen.len() && self.seen[self.reached] {
            self.reached += 1;
        }
    }

    pub fn reached(&self) -> usize {
        self.reached
    }

    pub fn total(&self) -> usize {
        self.seen.len()
    }

    pub fn complete(&self) -> bool {
        self.reached == self.seen.len() && !self.seen.is_empty()
    }

    pub fn normalized(&self) -> f64 {
        if self.seen.is_empty() {
            0.0
        } else {
            self.reached as f64 / self.seen.len() as f64
        }
    }
}

/// Environment by name. `grid` applies to the grid worlds.
pub fn make_env(name: &str, grid: GridConfig) -> Result<Box<dyn FactoredEnv>, EnvError> {
    if grid.size < 4 {
        return Err(EnvError::Config(format!("grid size must be >= 4, got {}", grid.size)));
    }
    Ok(match name {
        "thawing" => Box::new(GridEnv::new(Thawing::new(grid.size), grid)),
        "carwash" => Box::new(GridEnv::new(CarWash::new(grid.size), grid)),
        "minecraft2d" | "minecraft" => Box::new(GridEnv::new(Minecraft2d::new(grid.size), grid)),
        "synthetic" => Box::new(SyntheticLinearEnv::new(SyntheticConfig::default())),
        other => return Err(EnvError::UnknownEnv(other.into())),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tracker_requires_order_and_latches() {
        let mut t = StageTracker::new(3);
        t.observe(|k| k == 1);
        assert_eq!(t.reached(), 0);
        t.observe(|k| k == 0);
        // stage 1 was seen earlier, so both count now
        assert_eq!(t.reached(), 2);
        t.observe(|_| false);
        assert_eq!(t.reached(), 2);
        t.observe(|k| k == 2);
        assert!(t.complete());
        assert_eq!(t.normalized(), 1.0);
        t.reset();
        assert_eq!(t.reached(), 0);
    }

    #[test]
    fn unknown_names_and_small_grids_are_rejected() {
        assert!(matches!(make_env("kitchen", GridConfig::default()), Err(EnvError::UnknownEnv(_))));
        let tiny = GridConfig { size: 2, ..Default::default() };
        assert!(matches!(make_env("thawing", tiny), Err(EnvError::Config(_))));
    }
}
