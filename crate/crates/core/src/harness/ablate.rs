//! Cartesian sweeps over config keys.

use super::detect::{collect_dataset, eval_model, train_dynamics, ModelHeader, MODEL_VERSION};
use super::log::CsvLog;
use super::rl::train_rl_in;
use super::{create_dir, EnvSpec, HarnessError, RunConfig};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// One (arm, seed) result; detection arms fill the first pair of metric
/// columns, RL arms the second.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblateRow {
    pub arm: usize,
    /// `key=value` assignments of the arm, `;`-separated.
    pub settings: String,
    pub seed: u64,
    pub mode: String,
    pub roc_auc: Option<f64>,
    pub best_f1: Option<f64>,
    pub final_stage: Option<f64>,
    pub success_rate: Option<f64>,
}

fn is_detect_key(k: &str) -> bool {
    ["collect.", "dynamics.", "detect."].iter().any(|p| k.starts_with(p))
}

/// Every arm of the product is validated before the first run starts.
pub fn cmd_ablate(cfg: &RunConfig, grid: &[(String, Vec<String>)]) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(HarnessError::Config("ablation grid is empty".into()));
    }
    let mut arms: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (k, values) in grid {
        if grid.iter().filter(|(other, _)| other == k).count() > 1 {
            return Err(HarnessError::Config(format!("key {k:?} is swept twice")));
        }
        arms = arms
            .into_iter()
            .flat_map(|arm| {
                values.iter().map(move |v| {
                    let mut a = arm.clone();
                    a.push((k.clone(), v.clone()));
                    a
                })
            })
            .collect();
    }
    let configs = arms
        .iter()
        .map(|arm| {
            let mut c = cfg.clone();
            for (k, v) in arm {
                c.set(k, v)?;
            }
            c.validate()?;
            Ok(c)
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let detect = match cfg.ablate.mode.as_str() {
        "detect" => true,
        "rl" => false,
        _ => grid.iter().all(|(k, _)| is_detect_key(k)),
    };
    if detect {
        super::detect::detection_config(cfg, &cfg.method)?;
    }

    let name = EnvSpec::from_config(cfg, 0).name;
    let root = Path::new(&cfg.out).join("ablate").join(&name);
    create_dir(&root)?;
    let mut log = CsvLog::create(&root.join("ablate.csv"))?;
    for (i, (arm, c)) in arms.iter().zip(&configs).enumerate() {
        let settings = arm.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";");
        let dir = root.join(format!("arm{i}"));
        if detect {
            for &seed in &c.seeds {
                let (auc, f1) = match c.precision.as_str() {
                    "f32" => detect_arm::<f32>(c, seed, &dir)?,
                    _ => detect_arm::<f64>(c, seed, &dir)?,
                };
                log.append(&AblateRow {
                    arm: i,
                    settings: settings.clone(),
                    seed,
                    mode: "detect".into(),
                    roc_auc: Some(auc),
                    best_f1: Some(f1),
                    final_stage: None,
                    success_rate: None,
                })?;
            }
        } else {
            let summary = train_rl_in(c, &dir)?;
            for run in summary.runs {
                log.append(&AblateRow {
                    arm: i,
                    settings: settings.clone(),
                    seed: run.seed,
                    mode: "rl".into(),
                    roc_auc: None,
                    best_f1: None,
                    final_stage: Some(run.final_stage),
                    success_rate: Some(run.final_success_rate),
                })?;
            }
        }
    }
    Ok(root)
}

fn detect_arm<T: Scalar>(c: &RunConfig, seed: u64, dir: &Path) -> Result<(f64, f64), HarnessError> {
    let spec = EnvSpec::from_config(c, seed);
    let (data, _) = collect_dataset(c, seed)?;
    let model = train_dynamics::<T>(c, &spec, &c.method, &data, seed, &dir.join(format!("seed{seed}")))?;
    let header = ModelHeader {
        version: MODEL_VERSION,
        env: spec,
        method: c.method.clone(),
        seed,
        schema: data.schema.clone(),
        arch: model.arch().clone(),
        batches: c.detect.batches,
    };
    let m = &eval_model(c, &header, &model, seed)?[0];
    Ok((m.roc_auc, m.best_f1))
}
