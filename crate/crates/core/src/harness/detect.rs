//! Data collection, detection-model training and dependency evaluation.

use super::config::DETECT_METHODS;
use super::log::{write_json, CsvLog, DynRow};
use super::{create_dir, write_config, EnvSpec, HarnessError, RunConfig};
use crate::depgraph::{evaluate_detection, write_report_csv, DetectionMetrics, Detector, ReportRow};
use crate::dynamics::{ArchConfig, DynamicsConfig, DynamicsModel, Learner};
use crate::envs::{read_dataset, scripted_collect_eps, scripted_episodes, write_dataset, CollectStats, Dataset};
use crate::factored::FactorSchema;
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use crate::tensorcore::checkpoint::{load_into, read_checkpoint, write_checkpoint};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

pub const MODEL_VERSION: u32 = 1;

/// Sidecar of a model checkpoint (`model.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub version: u32,
    pub env: EnvSpec,
    pub method: String,
    pub seed: u64,
    pub schema: FactorSchema,
    pub arch: ArchConfig,
    pub batches: u64,
}

/// Scripted-policy dataset of `collect.transitions` transitions.
pub fn collect_dataset(cfg: &RunConfig, seed: u64) -> Result<(Dataset, CollectStats), HarnessError> {
    let mut env = EnvSpec::from_config(cfg, seed).build()?;
    Ok(scripted_collect_eps(env.as_mut(), cfg.collect.transitions, seed, cfg.collect.epsilon)?)
}

pub fn cmd_collect(cfg: &RunConfig, seed: u64) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    let (data, stats) = collect_dataset(cfg, seed)?;
    let dir = Path::new(&cfg.out).join("collect");
    create_dir(&dir)?;
    let path = dir.join(format!("{}_s{seed}.dset", data.env));
    let file = File::create(&path).map_err(HarnessError::io(&path))?;
    write_dataset(BufWriter::new(file), &data).map_err(|source| HarnessError::Dataset {
        path: path.clone(),
        source,
    })?;
    write_json(&path.with_extension("json"), &stats)?;
    Ok(path)
}

/// Training settings per detector: pCMI needs a feature-dropout model and
/// the baselines are trained without the Jacobian penalty.
pub fn detection_config(cfg: &RunConfig, method: &str) -> Result<DynamicsConfig, HarnessError> {
    let mut d = cfg.dynamics.clone();
    match method {
        "elden" => {}
        "pcmi" => {
            d.lambda = 0.0;
            d.feature_dropout = cfg.detect.pcmi_dropout;
        }
        "attn" => d.lambda = 0.0,
        other => {
            return Err(HarnessError::Config(format!(
                "unknown detection method {other:?} (expected one of {})",
                DETECT_METHODS.join(", ")
            )))
        }
    }
    Ok(d)
}

/// Trains on `data` for `detect.batches` batches, logging windowed averages
/// to `dir/train.csv` and writing `model.json` + `model.ckpt`.
pub fn train_dynamics<T: Scalar>(
    cfg: &RunConfig,
    spec: &EnvSpec,
    method: &str,
    data: &Dataset,
    seed: u64,
    dir: &Path,
) -> Result<DynamicsModel<T>, HarnessError> {
    let dcfg = detection_config(cfg, method)?;
    create_dir(dir)?;
    write_config(dir, cfg)?;
    let mut learner = Learner::<T>::new(data.schema.clone(), dcfg, derive_seed(seed, "dynamics", 0))?;
    let mut store = crate::dynamics::TransitionStore::new(data.records.len().max(1));
    for r in &data.records {
        let slot = store.push(r.clone());
        learner.on_insert(slot);
    }
    let mut log = CsvLog::create(&dir.join("train.csv"))?;
    let every = cfg.detect.log_every;
    let (mut nll, mut pen, mut pen_n) = (0.0, 0.0, 0u64);
    let mut window = 0u64;
    for b in 0..cfg.detect.batches {
        let out = learner.train_step(&store)?;
        nll += out.nll;
        if let Some(p) = out.penalty {
            pen += p;
            pen_n += 1;
        }
        window += 1;
        if (b + 1) % every == 0 || b + 1 == cfg.detect.batches {
            log.append(&DynRow {
                batch: b + 1,
                nll: nll / window as f64,
                penalty: (pen_n > 0).then(|| pen / pen_n as f64),
                lambda_eff: out.lambda_eff,
                mean_priority: out.mean_priority,
                skipped: learner.incidents().skipped_steps,
            })?;
            (nll, pen, pen_n, window) = (0.0, 0.0, 0, 0);
        }
    }
    let header = ModelHeader {
        version: MODEL_VERSION,
        env: spec.clone(),
        method: method.to_string(),
        seed,
        schema: data.schema.clone(),
        arch: learner.model.arch().clone(),
        batches: cfg.detect.batches,
    };
    write_json(&dir.join("model.json"), &header)?;
    let ckpt = dir.join("model.ckpt");
    let file = File::create(&ckpt).map_err(HarnessError::io(&ckpt))?;
    write_checkpoint(BufWriter::new(file), learner.model.params())?;
    Ok(learner.model)
}

fn read_dataset_file(path: &Path) -> Result<Dataset, HarnessError> {
    let file = File::open(path).map_err(HarnessError::io(path))?;
    read_dataset(BufReader::new(file))
        .map(|(_, d)| d)
        .map_err(|source| HarnessError::Dataset {
            path: path.to_path_buf(),
            source,
        })
}

/// Trains `cfg.method` on the given dataset file, or on a fresh scripted
/// collection when none is given. Returns the model directory.
pub fn cmd_train_dynamics(cfg: &RunConfig, dataset: Option<&Path>, seed: u64) -> Result<PathBuf, HarnessError> {
    cfg.validate()?;
    detection_config(cfg, &cfg.method)?;
    let spec = EnvSpec::from_config(cfg, seed);
    let data = match dataset {
        Some(p) => read_dataset_file(p)?,
        None => collect_dataset(cfg, seed)?.0,
    };
    let expected = spec.build()?;
    if data.env != spec.name || &data.schema != expected.schema() {
        return Err(HarnessError::Config(format!(
            "dataset is for {:?} (grid {:?}), config expects {:?} (grid {:?})",
            data.env,
            data.grid,
            spec.name,
            expected.grid_size()
        )));
    }
    let dir = Path::new(&cfg.out)
        .join("dynamics")
        .join(format!("{}_{}_s{seed}", spec.name, cfg.method));
    match cfg.precision.as_str() {
        "f32" => train_dynamics::<f32>(cfg, &spec, &cfg.method, &data, seed, &dir).map(drop)?,
        _ => train_dynamics::<f64>(cfg, &spec, &cfg.method, &data, seed, &dir).map(drop)?,
    }
    Ok(dir)
}

pub fn load_model<T: Scalar>(dir: &Path) -> Result<(ModelHeader, DynamicsModel<T>), HarnessError> {
    let hp = dir.join("model.json");
    let text = std::fs::read_to_string(&hp).map_err(HarnessError::io(&hp))?;
    let header: ModelHeader =
        serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("{}: {e}", hp.display())))?;
    if header.version != MODEL_VERSION {
        return Err(HarnessError::Config(format!("{}: unsupported model version {}", hp.display(), header.version)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut model = DynamicsModel::new(header.schema.clone(), header.arch.clone(), &mut rng)?;
    let cp = dir.join("model.ckpt");
    let file = File::open(&cp).map_err(HarnessError::io(&cp))?;
    load_into(model.params_mut(), read_checkpoint(BufReader::new(file))?)?;
    Ok((header, model))
}

/// Scores fresh scripted episodes with the model's detector and the oracle.
pub fn eval_model<T: Scalar>(
    cfg: &RunConfig,
    header: &ModelHeader,
    model: &DynamicsModel<T>,
    seed: u64,
) -> Result<Vec<DetectionMetrics>, HarnessError> {
    let mut env = header.env.build()?;
    if env.schema() != &header.schema {
        return Err(HarnessError::Config("checkpoint schema does not match its environment".into()));
    }
    let (data, _) = scripted_episodes(env.as_mut(), cfg.detect.episodes, derive_seed(seed, "eval", 0), cfg.collect.epsilon)?;
    let detector = match header.method.as_str() {
        "pcmi" => Detector::Pcmi(model),
        "attn" => Detector::Attention(model),
        _ => Detector::Elden {
            model,
            epsilon: cfg.detect.epsilon,
        },
    };
    let mut out = Vec::new();
    for d in [detector, Detector::Oracle] {
        out.push(evaluate_detection(&d, &data.records, cfg.detect.rows, cfg.detect.chunk)?);
    }
    Ok(out)
}

/// Evaluates the checkpoint in `model_dir`; the report lands in
/// `eval/<env>_<method>_s<seed>/`.
pub fn cmd_eval_deps(cfg: &RunConfig, model_dir: &Path, seed: u64) -> Result<Vec<DetectionMetrics>, HarnessError> {
    cfg.validate()?;
    let metrics = match cfg.precision.as_str() {
        "f32" => {
            let (h, m) = load_model::<f32>(model_dir)?;
            check_env(cfg, &h)?;
            (h.clone(), eval_model(cfg, &h, &m, seed)?)
        }
        _ => {
            let (h, m) = load_model::<f64>(model_dir)?;
            check_env(cfg, &h)?;
            (h.clone(), eval_model(cfg, &h, &m, seed)?)
        }
    };
    let (header, metrics) = metrics;
    let dir = Path::new(&cfg.out)
        .join("eval")
        .join(format!("{}_{}_s{seed}", header.env.name, header.method));
    create_dir(&dir)?;
    let rows: Vec<ReportRow> = metrics.iter().map(|m| ReportRow::new(&header.env.name, seed, m)).collect();
    let csv = dir.join("report.csv");
    write_report_csv(&csv, &rows).map_err(HarnessError::io(&csv))?;
    write_json(&dir.join("report.json"), &metrics)?;
    Ok(metrics)
}

fn check_env(cfg: &RunConfig, header: &ModelHeader) -> Result<(), HarnessError> {
    let want = EnvSpec::from_config(cfg, header.seed);
    if want.name != header.env.name {
        return Err(HarnessError::Config(format!(
            "checkpoint was trained on {:?}, config names {:?}",
            header.env.name, want.name
        )));
    }
    Ok(())
}
