//! Rollout evaluation with Wilson confidence intervals, switching-rate
//! measurement, hysteresis replay, and grid sweeps over epsilon / alpha /
//! demonstration budget.

use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{CarGoal, Task};
use crate::math::rng::derive_seed;
use crate::optim::TransitionDataset;
use crate::pipeline::{adapt, AdaptMethod, AdaptSpec, ScriptedExpert};
use crate::policy::{hard_select, ActMode, BasePolicy, SwitchMode, SwitchingPolicy, TargetPolicy};
use crate::rollout::{run_episode, EpisodeLog, PolicyActor, RolloutOptions};
use crate::{Error, Result};

/// z for a central 95% interval.
const Z_95: f64 = 1.959963984540054;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_return: f64,
    pub mean_episode_len: f64,
    /// Base switches per 100 steps; present only for hard-switching
    /// policies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub switching_rate: Option<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct EvalOptions {
    pub n_episodes: usize,
    pub seed: u64,
    pub mode: ActMode,
    /// Step cap override; defaults to the environment's own limit.
    pub horizon: Option<u32>,
}

/// What to roll out: a policy or the goal-aware scripted expert.
#[derive(Clone, Copy)]
pub enum EvalSubject<'a> {
    Policy(&'a TargetPolicy),
    Expert(&'a ScriptedExpert),
}

/// Wilson score interval for a binomial proportion at 95% confidence.
pub fn wilson_interval(successes: usize, n: usize) -> (f64, f64) {
    assert!(n > 0, "wilson interval needs n >= 1");
    assert!(successes <= n);
    let n_f = n as f64;
    let p_hat = successes as f64 / n_f;
    let z2 = Z_95 * Z_95;
    let denom = 1.0 + z2 / n_f;
    let center = (p_hat + z2 / (2.0 * n_f)) / denom;
    let half = Z_95 * (p_hat * (1.0 - p_hat) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    (
        (center - half).clamp(0.0, 1.0),
        (center + half).clamp(0.0, 1.0),
    )
}

/// True when two intervals overlap.
pub fn intervals_overlap(a: (f64, f64), b: (f64, f64)) -> bool {
    a.0 <= b.1 && b.0 <= a.1
}

/// Runs seeded episodes and aggregates success/return/length statistics.
/// Hard-switching policies additionally get their switching rate measured.
/// Episodes run in parallel; per-episode seeds derive from the episode
/// index, so results do not depend on thread count.
pub fn evaluate(
    env: &CarGoal,
    task: &Task,
    subject: EvalSubject<'_>,
    opts: &EvalOptions,
) -> Result<EvalReport> {
    Ok(evaluate_with_logs(env, task, subject, opts, false)?.0)
}

/// Like [`evaluate`] but also returns per-episode logs. Weight/selection
/// logs are recorded for switching policies when `record_weights` is set
/// (they are always recorded internally for hard switchers to measure the
/// switching rate).
pub fn evaluate_with_logs(
    env: &CarGoal,
    task: &Task,
    subject: EvalSubject<'_>,
    opts: &EvalOptions,
    record_weights: bool,
) -> Result<(EvalReport, Vec<EpisodeLog>)> {
    if opts.n_episodes == 0 {
        return Err(Error::Config("evaluation needs n_episodes >= 1".into()));
    }
    let is_hard_switch = matches!(
        subject,
        EvalSubject::Policy(TargetPolicy::Switching(SwitchingPolicy {
            mode: SwitchMode::Hard,
            ..
        }))
    );
    let rollout_opts = RolloutOptions {
        horizon: opts.horizon.unwrap_or(env.params.max_steps),
        record_observations: false,
        record_weights: record_weights || is_hard_switch,
    };

    let logs: Vec<EpisodeLog> = (0..opts.n_episodes)
        .into_par_iter()
        .map(|i| -> Result<EpisodeLog> {
            let reset_seed = derive_seed(opts.seed, 2 * i as u64);
            let action_seed = derive_seed(opts.seed, 2 * i as u64 + 1);
            match subject {
                EvalSubject::Policy(policy) => {
                    let mut actor = PolicyActor::new(policy, opts.mode);
                    run_episode(env, task, &mut actor, reset_seed, action_seed, &rollout_opts)
                }
                EvalSubject::Expert(expert) => {
                    let mut actor = expert.clone();
                    run_episode(env, task, &mut actor, reset_seed, action_seed, &rollout_opts)
                }
            }
        })
        .collect::<Result<_>>()?;

    let n = logs.len();
    let successes = logs.iter().filter(|l| l.success).count();
    let (ci_low, ci_high) = wilson_interval(successes, n);
    let mean_return = logs.iter().map(|l| l.total_reward).sum::<f64>() / n as f64;
    let mean_episode_len = logs.iter().map(|l| l.steps as f64).sum::<f64>() / n as f64;
    let switching_rate = if is_hard_switch {
        let selections: Vec<Vec<usize>> = logs.iter().map(|l| l.selections.clone()).collect();
        Some(switching_rate_from_selections(&selections)?)
    } else {
        None
    };

    Ok((
        EvalReport {
            n_episodes: n,
            successes,
            success_rate: successes as f64 / n as f64,
            ci_low,
            ci_high,
            mean_return,
            mean_episode_len,
            switching_rate,
        },
        logs,
    ))
}

/// Switches per 100 steps across episode selection logs: the number of
/// steps whose selected base differs from the previous step's, over the
/// total step count.
pub fn switching_rate_from_selections(episodes: &[Vec<usize>]) -> Result<f64> {
    let total_steps: usize = episodes.iter().map(|e| e.len()).sum();
    if total_steps == 0 {
        return Err(Error::Config("switching rate needs nonempty logs".into()));
    }
    let switches: usize = episodes
        .iter()
        .map(|e| e.windows(2).filter(|w| w[0] != w[1]).count())
        .sum();
    Ok(switches as f64 / total_steps as f64 * 100.0)
}

/// Replays the hysteresis rule over a logged per-step weight sequence.
pub fn replay_hard_selections(weights: &[Vec<f64>], epsilon: f64) -> Vec<usize> {
    let mut current = None;
    weights
        .iter()
        .map(|w| {
            let sel = hard_select(current, w, epsilon);
            current = Some(sel);
            sel
        })
        .collect()
}

/// Replays logged weight sequences under a different epsilon and reports
/// the switching rate.
pub fn replayed_switching_rate(weight_logs: &[Vec<Vec<f64>>], epsilon: f64) -> Result<f64> {
    let selections: Vec<Vec<usize>> = weight_logs
        .iter()
        .map(|w| replay_hard_selections(w, epsilon))
        .collect();
    switching_rate_from_selections(&selections)
}

/// Sweep axes: which knob the grid varies.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Epsilon,
    Alpha,
    DemoBudget,
}

impl std::str::FromStr for SweepAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "epsilon" => Ok(SweepAxis::Epsilon),
            "alpha" => Ok(SweepAxis::Alpha),
            "demo_budget" => Ok(SweepAxis::DemoBudget),
            other => Err(Error::Config(format!(
                "unknown sweep axis {other:?}; valid axes: epsilon, alpha, demo_budget"
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub success_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub switching_rate: Option<f64>,
    pub final_loss: f64,
}

/// Runs one adapt+evaluate per grid value with shared seeds so rows are
/// comparable.
///
/// - `Epsilon`: trains (or reuses) one hard-switching weight network and
///   re-evaluates it under each hysteresis margin.
/// - `Alpha`: retrains the switching policy per mixing coefficient.
/// - `DemoBudget`: adapts on whole-episode prefixes of the dataset.
pub fn sweep(
    env: &CarGoal,
    task: &Task,
    bases: &[Arc<BasePolicy>],
    data: &TransitionDataset,
    adapt_spec: &AdaptSpec,
    eval_opts: &EvalOptions,
    axis: SweepAxis,
    values: &[f64],
    reuse: Option<&SwitchingPolicy>,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one grid value".into()));
    }
    let mut rows = Vec::with_capacity(values.len());
    match axis {
        SweepAxis::Epsilon => {
            let (switching, final_loss) = match reuse {
                Some(p) => {
                    let loss = crate::optim::switching_loss(
                        &p.w_net,
                        data,
                        &p.bases,
                        adapt_spec.alpha,
                    )?;
                    (p.clone(), loss)
                }
                None => {
                    let mut spec = adapt_spec.clone();
                    spec.method = AdaptMethod::HardSwitch;
                    let out = adapt(bases, data, &spec)?;
                    match out.policy {
                        TargetPolicy::Switching(p) => (p, out.report.final_loss),
                        _ => unreachable!("hard_switch adapt returns a switching policy"),
                    }
                }
            };
            for &eps in values {
                if !(eps >= 0.0) {
                    return Err(Error::Config("epsilon grid values must be >= 0".into()));
                }
                let policy = TargetPolicy::Switching(SwitchingPolicy::new(
                    switching.bases.clone(),
                    switching.w_net.clone(),
                    SwitchMode::Hard,
                    eps,
                )?);
                let report = evaluate(env, task, EvalSubject::Policy(&policy), eval_opts)?;
                rows.push(SweepRow {
                    value: eps,
                    success_rate: report.success_rate,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    switching_rate: report.switching_rate,
                    final_loss,
                });
            }
        }
        SweepAxis::Alpha => {
            if !matches!(
                adapt_spec.method,
                AdaptMethod::SoftSwitch | AdaptMethod::HardSwitch
            ) {
                return Err(Error::Config(
                    "alpha sweeps apply to switching methods only".into(),
                ));
            }
            for &alpha in values {
                let mut spec = adapt_spec.clone();
                spec.alpha = alpha;
                let out = adapt(bases, data, &spec)?;
                let report = evaluate(env, task, EvalSubject::Policy(&out.policy), eval_opts)?;
                rows.push(SweepRow {
                    value: alpha,
                    success_rate: report.success_rate,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    switching_rate: report.switching_rate,
                    final_loss: out.report.final_loss,
                });
            }
        }
        SweepAxis::DemoBudget => {
            for &budget in values {
                if !(budget >= 1.0) {
                    return Err(Error::Config("demo budgets must be >= 1".into()));
                }
                let subset = data.prefix_by_budget(budget as usize)?;
                let out = adapt(bases, &subset, adapt_spec)?;
                let report = evaluate(env, task, EvalSubject::Policy(&out.policy), eval_opts)?;
                rows.push(SweepRow {
                    value: budget,
                    success_rate: report.success_rate,
                    ci_low: report.ci_low,
                    ci_high: report.ci_high,
                    switching_rate: report.switching_rate,
                    final_loss: out.report.final_loss,
                });
            }
        }
    }
    Ok(rows)
}

/// Writes a sweep table as CSV with header
/// `value,success,ci_low,ci_high,switching_rate,final_loss`.
pub fn write_sweep_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["value", "success", "ci_low", "ci_high", "switching_rate", "final_loss"])?;
    for row in rows {
        writer.write_record([
            row.value.to_string(),
            row.success_rate.to_string(),
            row.ci_low.to_string(),
            row.ci_high.to_string(),
            row.switching_rate.map(|r| r.to_string()).unwrap_or_default(),
            row.final_loss.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}
