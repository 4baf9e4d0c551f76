//! Run configuration as a flat `dotted.key = value` file.
//!
//! Every leaf of [`RunConfig`] has exactly one key; lists are written
//! comma-separated and absent optionals as `none`. Keys that do not name a
//! leaf are rejected.

use super::HarnessError;
use crate::depgraph::{Rows, DEFAULT_EPSILON};
use crate::dynamics::DynamicsConfig;
use crate::envs::{GridConfig, SyntheticConfig};
use crate::ppo::PpoConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const ENVS: [&str; 4] = ["thawing", "carwash", "minecraft2d", "synthetic"];
pub const RL_METHODS: [&str; 5] = ["elden", "disagreement", "curiosity", "cai", "vanilla"];
pub const DETECT_METHODS: [&str; 3] = ["elden", "pcmi", "attn"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CollectSection {
    pub transitions: usize,
    /// Probability of a uniform action in place of the scripted one.
    pub epsilon: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectSection {
    /// Dynamics training batches.
    pub batches: u64,
    /// Fresh evaluation episodes.
    pub episodes: usize,
    pub epsilon: f64,
    pub rows: Rows,
    /// Transitions scored per tape.
    pub chunk: usize,
    /// Training-CSV row every this many batches (window of the moving averages).
    pub log_every: u64,
    /// Feature-dropout probability used when training the pCMI model.
    pub pcmi_dropout: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExploreSection {
    pub ensemble: usize,
    /// Ensemble training batches per collected environment step.
    pub updates_per_step: f64,
    pub dynamics: DynamicsConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RewardSection {
    pub beta: f64,
    pub epsilon: f64,
    pub continuous_variance: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RlSection {
    /// Parallel environment instances.
    pub envs: usize,
    /// Steps per instance per rollout.
    pub n_steps: usize,
    /// Minimum transitions per policy update; raises the rollout length if needed.
    pub target_steps: usize,
    /// Finished episodes averaged for the final score.
    pub final_episodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    /// `detect`, `rl`, or `auto` (detect when every swept key is a
    /// `collect.`, `dynamics.` or `detect.` key).
    pub mode: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: String,
    pub method: String,
    pub seeds: Vec<u64>,
    pub out: String,
    /// Environment-step budget of an RL run.
    pub steps: u64,
    /// `f64` or `f32`.
    pub precision: String,
    pub grid: GridConfig,
    /// Generator settings; `synthetic.seed` is mixed with the run seed.
    pub synthetic: SyntheticConfig,
    pub collect: CollectSection,
    /// Detection-benchmark dynamics training.
    pub dynamics: DynamicsConfig,
    pub detect: DetectSection,
    pub explore: ExploreSection,
    pub reward: RewardSection,
    pub ppo: PpoConfig,
    pub rl: RlSection,
    pub ablate: AblateSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_env("thawing")
    }
}

impl RunConfig {
    /// Defaults, with the per-task rollout length and sampler settings.
    pub fn for_env(env: &str) -> Self {
        let mut explore_dyn = DynamicsConfig::rl();
        let n_steps = match env {
            "carwash" => 600,
            "minecraft2d" | "minecraft" => 100,
            _ => 60,
        };
        if matches!(env, "thawing" | "carwash") {
            explore_dyn.priority_exponent = None;
        }
        Self {
            env: env.to_string(),
            method: "elden".into(),
            seeds: vec![0, 1, 2],
            out: "runs".into(),
            steps: 500_000,
            precision: "f64".into(),
            grid: GridConfig {
                size: 8,
                ..GridConfig::default()
            },
            synthetic: SyntheticConfig::default(),
            collect: CollectSection {
                transitions: 100_000,
                epsilon: crate::envs::SCRIPTED_EPSILON,
            },
            dynamics: DynamicsConfig::default(),
            detect: DetectSection {
                batches: 50_000,
                episodes: 50,
                epsilon: DEFAULT_EPSILON,
                rows: Rows::StateOnly,
                chunk: 256,
                log_every: 1000,
                pcmi_dropout: 0.5,
            },
            explore: ExploreSection {
                ensemble: 5,
                updates_per_step: 1.0,
                dynamics: explore_dyn,
            },
            reward: RewardSection {
                beta: 1.0,
                epsilon: DEFAULT_EPSILON,
                continuous_variance: false,
            },
            ppo: PpoConfig::default(),
            rl: RlSection {
                envs: 20,
                n_steps,
                target_steps: 250,
                final_episodes: 100,
            },
            ablate: AblateSection { mode: "auto".into() },
        }
    }

    /// Defaults for the file's `env` (if any), then every assignment in order.
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let pairs = parse_pairs(text)?;
        let env = pairs.iter().rev().find(|(k, _)| k == "env").map_or("thawing", |(_, v)| v.as_str());
        let mut cfg = Self::for_env(env);
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// One `key = value` line per leaf, in sorted key order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.pairs() {
            out.push_str(&k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        }
        out
    }

    pub fn pairs(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        flatten("", &serde_json::to_value(self).expect("config serialises"), &mut out);
        out
    }

    pub fn keys(&self) -> Vec<String> {
        self.pairs().into_iter().map(|(k, _)| k).collect()
    }

    /// Assigns one leaf; the text is read according to the leaf's current type.
    pub fn set(&mut self, key: &str, text: &str) -> Result<(), HarnessError> {
        let mut tree = serde_json::to_value(&*self).expect("config serialises");
        let mut node = &mut tree;
        for part in key.split('.') {
            node = node
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| HarnessError::Config(format!("unknown config key {key:?}")))?;
        }
        if node.is_object() {
            return Err(HarnessError::Config(format!("{key:?} is a section, not a key")));
        }
        *node = parse_value(text.trim(), node).map_err(|e| HarnessError::Config(format!("{key}: {e}")))?;
        *self = serde_json::from_value(tree).map_err(|e| HarnessError::Config(format!("{key} = {text:?}: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        if !ENVS.contains(&self.env.as_str()) && self.env != "minecraft" {
            return bad(format!("unknown env {:?} (expected one of {})", self.env, ENVS.join(", ")));
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !matches!(self.precision.as_str(), "f64" | "f32") {
            return bad(format!("precision must be f64 or f32, got {:?}", self.precision));
        }
        if self.grid.size < 4 {
            return bad(format!("grid.size must be >= 4, got {}", self.grid.size));
        }
        if self.synthetic.n < 2 || !(0.0..=1.0).contains(&self.synthetic.density) || !(self.synthetic.noise >= 0.0) {
            return bad("synthetic: n >= 2, density in [0, 1], noise >= 0".into());
        }
        if !(0.0..=1.0).contains(&self.collect.epsilon) {
            return bad("collect.epsilon must lie in [0, 1]".into());
        }
        if self.detect.chunk == 0 || self.detect.log_every == 0 || self.detect.episodes == 0 {
            return bad("detect.chunk, detect.log_every and detect.episodes must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.detect.pcmi_dropout) {
            return bad("detect.pcmi_dropout must lie in [0, 1]".into());
        }
        if self.explore.ensemble == 0 || !(self.explore.updates_per_step >= 0.0) {
            return bad("explore.ensemble must be positive and updates_per_step >= 0".into());
        }
        if !(self.reward.beta >= 0.0) || !(self.reward.epsilon > 0.0) {
            return bad("reward.beta must be >= 0 and reward.epsilon > 0".into());
        }
        if self.rl.envs == 0 || self.rl.n_steps == 0 || self.rl.final_episodes == 0 {
            return bad("rl.envs, rl.n_steps and rl.final_episodes must be positive".into());
        }
        if !matches!(self.ablate.mode.as_str(), "auto" | "detect" | "rl") {
            return bad(format!("ablate.mode must be auto, detect or rl, got {:?}", self.ablate.mode));
        }
        self.dynamics.validate().map_err(|e| HarnessError::Config(format!("dynamics: {e}")))?;
        self.explore.dynamics.validate().map_err(|e| HarnessError::Config(format!("explore.dynamics: {e}")))?;
        self.ppo.validate().map_err(|e| HarnessError::Config(format!("ppo: {e}")))
    }

    /// Transitions per policy update: `envs × max(n_steps, ⌈target_steps / envs⌉)`.
    pub fn rollout_horizon(&self) -> usize {
        self.rl.n_steps.max(self.rl.target_steps.div_ceil(self.rl.envs))
    }
}

/// `key = value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>, HarnessError> {
    let mut out: Vec<(String, String)> = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("line {}: expected key = value", n + 1)))?;
        let k = k.trim().to_string();
        if out.iter().any(|(seen, _)| *seen == k) {
            return Err(HarnessError::Config(format!("line {}: duplicate key {k:?}", n + 1)));
        }
        out.push((k, v.trim().to_string()));
    }
    Ok(out)
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, child) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        _ => out.push((prefix.to_string(), render(v))),
    }
}

fn render(v: &Value) -> String {
    match v {
        Value::Null => "none".into(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(render).collect::<Vec<_>>().join(","),
        other => other.to_string(),
    }
}

fn parse_value(text: &str, current: &Value) -> Result<Value, String> {
    match current {
        Value::Array(_) => text
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| parse_atom(s, &Value::Null))
            .collect::<Result<Vec<_>, _>>()
            .map(Value::Array),
        _ => parse_atom(text, current),
    }
}

fn parse_atom(text: &str, current: &Value) -> Result<Value, String> {
    if let Value::String(_) = current {
        return Ok(Value::String(text.to_string()));
    }
    if text == "none" {
        return Ok(Value::Null);
    }
    if let Ok(b) = text.parse::<bool>() {
        return Ok(Value::Bool(b));
    }
    if let Ok(u) = text.parse::<u64>() {
        return Ok(Value::from(u));
    }
    if let Ok(i) = text.parse::<i64>() {
        return Ok(Value::from(i));
    }
    if let Ok(f) = text.parse::<f64>() {
        return serde_json::Number::from_f64(f)
            .map(Value::Number)
            .ok_or_else(|| format!("{text} is not a finite number"));
    }
    match current {
        Value::Null => Ok(Value::String(text.to_string())),
        _ => Err(format!("cannot read {text:?} as a {}", kind(current))),
    }
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "boolean",
        Value::Number(_) => "number",
        _ => "value",
    }
}

/// Swept values for one key: `key=v1,v2,...` or a preset name.
pub fn parse_grid_spec(spec: &str) -> Result<Vec<(String, Vec<String>)>, HarnessError> {
    let preset = |pairs: &[(&str, &str)]| pairs.iter().map(|(k, v)| (k.to_string(), split_list(v))).collect();
    Ok(match spec {
        "lambda" => preset(&[("dynamics.lambda", "0,1e-1,1e-2,1e-3,1e-4,1e-5")]),
        "beta" => preset(&[("reward.beta", "0.1,1,10,100")]),
        "epsilon" => preset(&[("reward.epsilon", "3e-5,1e-4,3e-4,1e-3,3e-3")]),
        "priority" => preset(&[("explore.dynamics.priority_exponent", "none,0.5")]),
        "table2" => preset(&[("dynamics.mixup_alpha", "none,1"), ("dynamics.lambda", "0,1e-2")]),
        _ => {
            let (k, v) = spec.split_once('=').ok_or_else(|| {
                HarnessError::Config(format!(
                    "grid spec {spec:?}: expected key=v1,v2,... or one of lambda, beta, epsilon, priority, table2"
                ))
            })?;
            let values = split_list(v);
            if values.is_empty() {
                return Err(HarnessError::Config(format!("grid spec {spec:?} has no values")));
            }
            vec![(k.trim().to_string(), values)]
        }
    })
}

fn split_list(v: &str) -> Vec<String> {
    v.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn default_round_trips() {
        for env in ENVS {
            let c = RunConfig::for_env(env);
            c.validate().unwrap();
            assert_eq!(RunConfig::parse(&c.to_text()).unwrap(), c);
        }
    }

    #[test]
    fn unknown_and_section_keys_are_rejected() {
        let mut c = RunConfig::default();
        assert!(matches!(c.set("dynamics.lamda", "1"), Err(HarnessError::Config(_))));
        assert!(matches!(c.set("dynamics", "1"), Err(HarnessError::Config(_))));
        assert!(matches!(RunConfig::parse("nope = 3\n"), Err(HarnessError::Config(_))));
        assert!(matches!(RunConfig::parse("seeds = 1\nseeds = 2\n"), Err(HarnessError::Config(_))));
        assert!(matches!(c.set("ppo.epochs", "ten"), Err(HarnessError::Config(_))));
    }

    #[test]
    fn typed_assignment() {
        let mut c = RunConfig::default();
        c.set("dynamics.lambda", "1e-2").unwrap();
        c.set("dynamics.mixup_alpha", "none").unwrap();
        c.set("seeds", "7").unwrap();
        c.set("ppo.hidden", "64, 32").unwrap();
        c.set("grid.max_steps", "30").unwrap();
        c.set("detect.rows", "all").unwrap();
        c.set("out", "123").unwrap();
        assert_eq!(c.dynamics.lambda, 1e-2);
        assert_eq!(c.dynamics.mixup_alpha, None);
        assert_eq!(c.seeds, vec![7]);
        assert_eq!(c.ppo.hidden, vec![64, 32]);
        assert_eq!(c.grid.max_steps, Some(30));
        assert_eq!(c.detect.rows, Rows::All);
        assert_eq!(c.out, "123");
        let parsed = RunConfig::parse("# comment\n\nenv = carwash\nreward.beta=10\n").unwrap();
        assert_eq!(parsed.rl.n_steps, 600);
        assert_eq!(parsed.reward.beta, 10.0);
    }

    #[test]
    fn grid_specs() {
        assert_eq!(parse_grid_spec("lambda").unwrap()[0].1.len(), 6);
        assert_eq!(parse_grid_spec("beta").unwrap()[0].1, vec!["0.1", "1", "10", "100"]);
        assert_eq!(parse_grid_spec("a.b=1,2").unwrap(), vec![("a.b".to_string(), vec!["1".into(), "2".into()])]);
        assert!(parse_grid_spec("a.b=").is_err());
        assert!(parse_grid_spec("nonsense").is_err());
    }

    proptest! {
        #[test]
        fn random_configs_round_trip(
            lambda in 0.0f64..1.0,
            lr in 1e-7f64..1e-1,
            beta in 0.0f64..100.0,
            mixup in proptest::option::of(0.01f64..10.0),
            prio in proptest::option::of(0.0f64..2.0),
            seeds in proptest::collection::vec(any::<u64>(), 1..5),
            hidden in proptest::collection::vec(1usize..512, 1..4),
            steps in 1u64..10_000_000,
            clip_value in any::<bool>(),
            max_steps in proptest::option::of(1usize..1000),
            env in proptest::sample::select(ENVS.to_vec()),
        ) {
            let mut c = RunConfig::for_env(env);
            c.dynamics.lambda = lambda;
            c.explore.dynamics.lr = lr;
            c.reward.beta = beta;
            c.dynamics.mixup_alpha = mixup;
            c.explore.dynamics.priority_exponent = prio;
            c.seeds = seeds;
            c.ppo.hidden = hidden;
            c.steps = steps;
            c.ppo.clip_value = clip_value;
            c.grid.max_steps = max_steps;
            let back = RunConfig::parse(&c.to_text()).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
