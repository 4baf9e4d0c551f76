//! Append-only CSV logs and JSON summaries.

use super::HarnessError;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::path::{Path, PathBuf};

/// Version of the CSV column layouts below; bumped on any change.
pub const CSV_VERSION: u32 = 1;

/// CSV file flushed after every row.
pub struct CsvLog {
    path: PathBuf,
    w: csv::Writer<File>,
}

impl CsvLog {
    pub fn create(path: &Path) -> Result<Self, HarnessError> {
        let w = csv::Writer::from_path(path).map_err(|source| HarnessError::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self {
            path: path.to_path_buf(),
            w,
        })
    }

    pub fn append<R: Serialize>(&mut self, row: &R) -> Result<(), HarnessError> {
        self.w.serialize(row).map_err(|source| HarnessError::Csv {
            path: self.path.clone(),
            source,
        })?;
        self.w.flush().map_err(HarnessError::io(&self.path))
    }
}

/// One policy iteration of an RL run. Episode columns are empty when no
/// episode finished during the iteration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RlRow {
    pub iteration: u64,
    pub env_steps: u64,
    pub episodes: usize,
    pub mean_task_return: Option<f64>,
    pub success_rate: Option<f64>,
    pub stage_mean: Option<f64>,
    pub stage_std: Option<f64>,
    pub intrinsic_mean: f64,
    pub intrinsic_max: f64,
    pub intrinsic_frac_zero: f64,
    pub flagged: u64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub ppo_skipped: usize,
    pub dynamics_batches: u64,
    pub dynamics_nll: Option<f64>,
    pub dynamics_skipped: u64,
}

/// Moving averages over one logging window of dynamics training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynRow {
    pub batch: u64,
    pub nll: f64,
    pub penalty: Option<f64>,
    pub lambda_eff: f64,
    pub mean_priority: f64,
    pub skipped: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Incidents {
    pub ppo_skipped: u64,
    pub dynamics_skipped: u64,
    pub prob_underflows: u64,
    pub flagged_rewards: u64,
}

/// Result of one (config, seed) RL run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub env_steps: u64,
    pub iterations: u64,
    pub episodes: u64,
    /// Mean normalized stage over the last `rl.final_episodes` episodes.
    pub final_stage: f64,
    pub final_success_rate: f64,
    pub wall_seconds: f64,
    pub incidents: Incidents,
}

/// Across-seed summary of an RL configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub csv_version: u32,
    pub env: String,
    pub method: String,
    pub runs: Vec<SeedSummary>,
    pub final_stage_mean: f64,
    pub final_stage_std: f64,
    pub success_rate_mean: f64,
    pub success_rate_std: f64,
}

impl RunSummary {
    pub fn new(env: &str, method: &str, runs: Vec<SeedSummary>) -> Self {
        let (sm, ss) = mean_std(&runs.iter().map(|r| r.final_stage).collect::<Vec<_>>());
        let (rm, rs) = mean_std(&runs.iter().map(|r| r.final_success_rate).collect::<Vec<_>>());
        Self {
            csv_version: CSV_VERSION,
            env: env.to_string(),
            method: method.to_string(),
            runs,
            final_stage_mean: sm,
            final_stage_std: ss,
            success_rate_mean: rm,
            success_rate_std: rs,
        }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (m, 0.0);
    }
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).expect("summaries serialise");
    std::fs::write(path, text + "\n").map_err(HarnessError::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_cases() {
        assert_eq!(mean_std(&[]), (0.0, 0.0));
        assert_eq!(mean_std(&[2.0]), (2.0, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert!((m - 2.0).abs() < 1e-15 && (s - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rows_are_flushed_immediately() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.csv");
        let mut log = CsvLog::create(&path).unwrap();
        log.append(&DynRow {
            batch: 1,
            nll: 0.5,
            penalty: None,
            lambda_eff: 0.0,
            mean_priority: 1.0,
            skipped: 0,
        })
        .unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "batch,nll,penalty,lambda_eff,mean_priority,skipped\n1,0.5,,0.0,1.0,0\n");
    }
}
