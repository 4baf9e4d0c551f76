//! Experiment orchestration: configuration, logs and the five commands.
//!
//! Output layout under the configured root (`out`):
//!
//! - `collect/<env>_s<seed>.dset` (+ `.json` collection stats)
//! - `dynamics/<env>_<method>_s<seed>/` — `model.json`, `model.ckpt`, `train.csv`
//! - `eval/<env>_<method>_s<seed>/` — `report.csv`, `report.json`
//! - `rl/<env>/<method>/seed<seed>/` — `log.csv`, `summary.json`; the method
//!   directory holds the across-seed `summary.json`
//! - `ablate/<env>/` — `ablate.csv` plus one directory per arm
//!
//! Every run directory also gets the resolved `config.txt`.

mod ablate;
mod config;
mod detect;
mod log;
mod rl;

pub use ablate::{cmd_ablate, AblateRow};
pub use config::{
    parse_grid_spec, parse_pairs, AblateSection, CollectSection, DetectSection, ExploreSection, RewardSection, RlSection,
    RunConfig, DETECT_METHODS, ENVS, RL_METHODS,
};
pub use detect::{
    cmd_collect, cmd_eval_deps, cmd_train_dynamics, collect_dataset, detection_config, eval_model, load_model, train_dynamics,
    ModelHeader, MODEL_VERSION,
};
pub use log::{mean_std, write_json, CsvLog, DynRow, Incidents, RlRow, RunSummary, SeedSummary, CSV_VERSION};
pub use rl::{cmd_train_rl, run_rl};

use crate::depgraph::DetectError;
use crate::dynamics::DynamicsError;
use crate::envs::{make_env, DatasetError, EnvError, FactoredEnv, GridConfig, SyntheticConfig, SyntheticLinearEnv};
use crate::ppo::PpoError;
use crate::seed::derive_seed;
use crate::tensorcore::TensorError;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Environment variable naming the default output root.
pub const OUT_ROOT_VAR: &str = "ELDEN_OUT_ROOT";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Dataset {
        path: PathBuf,
        #[source]
        source: DatasetError,
    },
    #[error("{}: {source}", path.display())]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Detect(#[from] DetectError),
    #[error(transparent)]
    Ppo(#[from] PpoError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

impl HarnessError {
    /// 2 for configuration problems, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_)
            | HarnessError::Env(EnvError::UnknownEnv(_) | EnvError::Config(_))
            | HarnessError::Dynamics(DynamicsError::Config(_))
            | HarnessError::Ppo(PpoError::Config(_)) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
        move |source| HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Everything needed to rebuild an environment exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: String,
    pub grid: GridConfig,
    /// Resolved generator settings for the synthetic env.
    pub synthetic: Option<SyntheticConfig>,
}

impl EnvSpec {
    /// The synthetic generator seed is `derive_seed(seed, "synthetic", synthetic.seed)`.
    pub fn from_config(cfg: &RunConfig, seed: u64) -> Self {
        let name = match cfg.env.as_str() {
            "minecraft" => "minecraft2d".to_string(),
            other => other.to_string(),
        };
        let synthetic = (name == "synthetic").then(|| SyntheticConfig {
            seed: derive_seed(seed, "synthetic", cfg.synthetic.seed),
            ..cfg.synthetic.clone()
        });
        Self {
            name,
            grid: cfg.grid.clone(),
            synthetic,
        }
    }

    pub fn build(&self) -> Result<Box<dyn FactoredEnv>, HarnessError> {
        if let Some(s) = &self.synthetic {
            return Ok(Box::new(SyntheticLinearEnv::new(s.clone())));
        }
        make_env(&self.name, self.grid.clone()).map_err(|e| HarnessError::Config(e.to_string()))
    }
}

pub(crate) fn create_dir(path: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(path).map_err(HarnessError::io(path))
}

pub(crate) fn write_config(dir: &Path, cfg: &RunConfig) -> Result<(), HarnessError> {
    let path = dir.join("config.txt");
    std::fs::write(&path, cfg.to_text()).map_err(HarnessError::io(&path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Env(EnvError::UnknownEnv("x".into())).exit_code(), 2);
        assert_eq!(HarnessError::Env(EnvError::NotReset).exit_code(), 3);
        assert_eq!(HarnessError::Dynamics(DynamicsError::EmptyBuffer).exit_code(), 3);
    }

    #[test]
    fn synthetic_spec_depends_on_seed() {
        let mut cfg = RunConfig::for_env("synthetic");
        cfg.synthetic.n = 4;
        let a = EnvSpec::from_config(&cfg, 0);
        let b = EnvSpec::from_config(&cfg, 1);
        assert_ne!(a.synthetic.as_ref().unwrap().seed, b.synthetic.as_ref().unwrap().seed);
        assert_eq!(a.build().unwrap().schema().n_factors(), 4);
        assert!(EnvSpec::from_config(&RunConfig::for_env("thawing"), 0).synthetic.is_none());
    }
}
