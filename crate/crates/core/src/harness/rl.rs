//! The on-policy exploration loop.

use super::config::RL_METHODS;
use super::log::{write_json, CsvLog, Incidents, RlRow, RunSummary, SeedSummary};
use super::{create_dir, write_config, EnvSpec, HarnessError, RunConfig};
use crate::envs::FactoredEnv;
use crate::explore::{DynamicsEnsemble, IntrinsicKind, RewardConfig};
use crate::ppo::{collect_rollouts, EnvPool, PpoAgent};
use crate::scalar::Scalar;
use crate::seed::derive_seed;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::VecDeque;
use std::path::{Path, PathBuf};
use std::time::Instant;

fn reward_config(cfg: &RunConfig, method: &str) -> Result<RewardConfig, HarnessError> {
    let kind = match method {
        "vanilla" => IntrinsicKind::None,
        m if RL_METHODS.contains(&m) => m.parse().map_err(HarnessError::Config)?,
        other => {
            return Err(HarnessError::Config(format!(
                "unknown RL method {other:?} (expected one of {})",
                RL_METHODS.join(", ")
            )))
        }
    };
    let r = RewardConfig {
        kind,
        beta: if kind == IntrinsicKind::None { 0.0 } else { cfg.reward.beta },
        epsilon: cfg.reward.epsilon,
        continuous_variance: cfg.reward.continuous_variance,
    };
    r.validate().map_err(HarnessError::Config)?;
    Ok(r)
}

/// One seed of the training loop, logging to `dir/log.csv`. Each iteration
/// collects a rollout, scores it with the frozen ensemble, updates the
/// policy, then adds the transitions to the replay buffer and trains the
/// ensemble. Stage predicates only reach the log.
pub fn run_rl<T: Scalar>(
    cfg: &RunConfig,
    env: &dyn FactoredEnv,
    method: &str,
    seed: u64,
    dir: &Path,
) -> Result<SeedSummary, HarnessError> {
    let started = Instant::now();
    let reward = reward_config(cfg, method)?;
    create_dir(dir)?;
    write_config(dir, cfg)?;
    let mut log = CsvLog::create(&dir.join("log.csv"))?;

    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "policy-init", 0));
    let mut agent = PpoAgent::<T>::new(env.schema().clone(), cfg.ppo.clone(), &mut init_rng)?;
    let mut act_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "act", 0));
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "shuffle", 0));
    let mut ensemble = if reward.kind.uses_ensemble() {
        Some(DynamicsEnsemble::<T>::new(
            env.schema(),
            &cfg.explore.dynamics,
            cfg.explore.ensemble,
            derive_seed(seed, "ensemble", 0),
        )?)
    } else {
        None
    };
    let mut pool = EnvPool::new(env, cfg.rl.envs, derive_seed(seed, "envs", 0));
    let horizon = cfg.rollout_horizon();

    let mut incidents = Incidents::default();
    let mut recent: VecDeque<(f64, bool)> = VecDeque::new();
    let (mut env_steps, mut iteration, mut episodes) = (0u64, 0u64, 0u64);
    while env_steps < cfg.steps {
        let batch = collect_rollouts(
            &agent.net,
            &mut pool,
            &reward,
            ensemble.as_ref(),
            horizon,
            cfg.ppo.gamma,
            cfg.ppo.gae_lambda,
            &mut act_rng,
        )?;
        let stats = agent.update(&batch, &mut shuffle_rng)?;
        env_steps += batch.len() as u64;
        iteration += 1;

        let (mut dyn_batches, mut nll_sum, mut nll_n, mut dyn_skipped) = (0u64, 0.0, 0u64, 0u64);
        if let Some(ens) = ensemble.as_mut() {
            for r in &batch.records {
                ens.push(r.clone());
            }
            let updates = (cfg.explore.updates_per_step * batch.len() as f64).round() as u64;
            for _ in 0..updates {
                for out in ens.train_step()? {
                    if out.skipped {
                        dyn_skipped += 1;
                    } else {
                        nll_sum += out.nll;
                        nll_n += 1;
                    }
                }
                dyn_batches += 1;
            }
        }

        let n_ep = batch.episodes.len();
        episodes += n_ep as u64;
        for ep in &batch.episodes {
            recent.push_back((ep.normalized_stage, ep.success));
            if recent.len() > cfg.rl.final_episodes {
                recent.pop_front();
            }
        }
        let over = |f: &dyn Fn(&crate::ppo::EpisodeStats) -> f64| {
            (n_ep > 0).then(|| batch.episodes.iter().map(f).sum::<f64>() / n_ep as f64)
        };
        let stage_mean = over(&|e| e.normalized_stage);
        let stage_std = stage_mean.map(|m| {
            (batch.episodes.iter().map(|e| (e.normalized_stage - m).powi(2)).sum::<f64>() / n_ep as f64).sqrt()
        });
        let intr = &batch.intrinsic;
        incidents.ppo_skipped += stats.skipped as u64;
        incidents.dynamics_skipped += dyn_skipped;
        incidents.flagged_rewards += batch.flagged;
        log.append(&RlRow {
            iteration,
            env_steps,
            episodes: n_ep,
            mean_task_return: over(&|e| e.task_return),
            success_rate: over(&|e| f64::from(u8::from(e.success))),
            stage_mean,
            stage_std,
            intrinsic_mean: intr.iter().sum::<f64>() / intr.len().max(1) as f64,
            intrinsic_max: intr.iter().copied().fold(0.0, f64::max),
            intrinsic_frac_zero: intr.iter().filter(|&&r| r == 0.0).count() as f64 / intr.len().max(1) as f64,
            flagged: batch.flagged,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
            approx_kl: stats.approx_kl,
            clip_fraction: stats.clip_fraction,
            ppo_skipped: stats.skipped,
            dynamics_batches: dyn_batches,
            dynamics_nll: (nll_n > 0).then(|| nll_sum / nll_n as f64),
            dynamics_skipped: dyn_skipped,
        })?;
    }
    if let Some(ens) = &ensemble {
        incidents.prob_underflows = ens.members.iter().map(|m| m.incidents().prob_underflows).sum();
    }
    let k = recent.len().max(1) as f64;
    let summary = SeedSummary {
        seed,
        env_steps,
        iterations: iteration,
        episodes,
        final_stage: recent.iter().map(|r| r.0).sum::<f64>() / k,
        final_success_rate: recent.iter().filter(|r| r.1).count() as f64 / k,
        wall_seconds: started.elapsed().as_secs_f64(),
        incidents,
    };
    write_json(&dir.join("summary.json"), &summary)?;
    Ok(summary)
}

/// Runs every configured seed of `cfg.method` and writes the across-seed
/// summary. Returns the method directory.
pub fn cmd_train_rl(cfg: &RunConfig) -> Result<(PathBuf, RunSummary), HarnessError> {
    cfg.validate()?;
    reward_config(cfg, &cfg.method)?;
    let name = EnvSpec::from_config(cfg, 0).name;
    let root = Path::new(&cfg.out).join("rl").join(&name).join(&cfg.method);
    let summary = train_rl_in(cfg, &root)?;
    Ok((root, summary))
}

pub(crate) fn train_rl_in(cfg: &RunConfig, root: &Path) -> Result<RunSummary, HarnessError> {
    let mut runs = Vec::new();
    let mut name = cfg.env.clone();
    for &seed in &cfg.seeds {
        let spec = EnvSpec::from_config(cfg, seed);
        name = spec.name.clone();
        let env = spec.build()?;
        let dir = root.join(format!("seed{seed}"));
        runs.push(match cfg.precision.as_str() {
            "f32" => run_rl::<f32>(cfg, env.as_ref(), &cfg.method, seed, &dir)?,
            _ => run_rl::<f64>(cfg, env.as_ref(), &cfg.method, seed, &dir)?,
        });
    }
    let summary = RunSummary::new(&name, &cfg.method, runs);
    create_dir(root)?;
    write_json(&root.join("summary.json"), &summary)?;
    Ok(summary)
}
