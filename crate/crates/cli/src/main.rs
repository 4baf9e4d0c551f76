use clap::{Args, Parser, Subcommand};
use elden::harness::{
    cmd_ablate, cmd_collect, cmd_eval_deps, cmd_train_dynamics, cmd_train_rl, parse_grid_spec, HarnessError, RunConfig,
    OUT_ROOT_VAR,
};
use std::path::PathBuf;
use std::process::ExitCode;

/// Exploration through local dependency graphs.
///
/// Exit status: 0 on success, 2 on a configuration error, 3 when a run aborts.
#[derive(Parser)]
#[command(name = "elden", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Collect a scripted-policy dataset (`--steps` = transitions).
    Collect(Common),
    /// Train a detection dynamics model (`--method` elden|pcmi|attn, `--steps` = batches).
    TrainDynamics {
        #[command(flatten)]
        common: Common,
        /// Dataset written by `collect`; collected on the fly when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Evaluate a trained model's dependency detection on fresh episodes.
    EvalDeps {
        #[command(flatten)]
        common: Common,
        /// Model directory written by `train-dynamics`.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train a policy (`--method` elden|disagreement|curiosity|cai|vanilla, `--steps` = env steps).
    TrainRl(Common),
    /// Sweep config keys: `--grid key=v1,v2` (repeatable) or a preset
    /// (lambda, beta, epsilon, priority, table2).
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long, required = true)]
        grid: Vec<String>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    method: Option<String>,
    /// Single seed; replaces the configured seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output root; defaults to the config's `out`, then $ELDEN_OUT_ROOT, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    steps: Option<u64>,
    /// Extra `key=value` overrides applied after the config file.
    #[arg(long = "set")]
    set: Vec<String>,
}

enum StepsKey {
    Transitions,
    Batches,
    EnvSteps,
}

impl Common {
    fn resolve(&self, steps: StepsKey) -> Result<RunConfig, HarnessError> {
        let text = match &self.config {
            Some(p) => std::fs::read_to_string(p).map_err(|e| HarnessError::Config(format!("{}: {e}", p.display())))?,
            None => String::new(),
        };
        let mut pairs = elden::harness::parse_pairs(&text)?;
        let file_sets_out = pairs.iter().any(|(k, _)| k == "out");
        if let Some(env) = &self.env {
            pairs.retain(|(k, _)| k != "env");
            pairs.insert(0, ("env".into(), env.clone()));
        }
        let env = pairs.iter().find(|(k, _)| k == "env").map_or("thawing", |(_, v)| v.as_str());
        let mut cfg = RunConfig::for_env(env);
        if !file_sets_out {
            if let Ok(root) = std::env::var(OUT_ROOT_VAR) {
                cfg.out = root;
            }
        }
        for (k, v) in &pairs {
            cfg.set(k, v)?;
        }
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("--set {kv:?}: expected key=value")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(m) = &self.method {
            cfg.method = m.clone();
        }
        if let Some(s) = self.seed {
            cfg.seeds = vec![s];
        }
        if let Some(o) = &self.out {
            cfg.out = o.to_string_lossy().into_owned();
        }
        if let Some(n) = self.steps {
            match steps {
                StepsKey::Transitions => cfg.collect.transitions = n as usize,
                StepsKey::Batches => cfg.detect.batches = n,
                StepsKey::EnvSteps => cfg.steps = n,
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Collect(c) => {
            let cfg = c.resolve(StepsKey::Transitions)?;
            for &seed in &cfg.seeds {
                println!("{}", cmd_collect(&cfg, seed)?.display());
            }
        }
        Command::TrainDynamics { common, data } => {
            let cfg = common.resolve(StepsKey::Batches)?;
            for &seed in &cfg.seeds {
                println!("{}", cmd_train_dynamics(&cfg, data.as_deref(), seed)?.display());
            }
        }
        Command::EvalDeps { common, checkpoint } => {
            let cfg = common.resolve(StepsKey::Transitions)?;
            for &seed in &cfg.seeds {
                for m in cmd_eval_deps(&cfg, &checkpoint, seed)? {
                    println!(
                        "seed {seed} {:<8} roc_auc {:.4} best_f1 {:.4} positive_rate {:.4} forward {} backward {}",
                        m.method, m.roc_auc, m.best_f1, m.positive_rate, m.forward_passes, m.backward_passes
                    );
                }
            }
        }
        Command::TrainRl(c) => {
            let cfg = c.resolve(StepsKey::EnvSteps)?;
            let (dir, s) = cmd_train_rl(&cfg)?;
            println!(
                "{}: final normalized stage {:.3} ± {:.3}, success {:.3} ± {:.3}",
                dir.display(),
                s.final_stage_mean,
                s.final_stage_std,
                s.success_rate_mean,
                s.success_rate_std
            );
        }
        Command::Ablate { common, grid } => {
            let cfg = common.resolve(StepsKey::EnvSteps)?;
            let mut specs = Vec::new();
            for g in &grid {
                specs.extend(parse_grid_spec(g)?);
            }
            println!("{}", cmd_ablate(&cfg, &specs)?.join("ablate.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
