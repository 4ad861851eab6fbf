//! Command implementations behind the `cargoal-lab` binary. Each command is
//! a pure function of (config file, seed, input files) to output files under
//! `out/{policies,datasets,bundles,reports}/`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::env::{CarGoal, TrajectoryRow};
use crate::eval::{evaluate, EvalReport, EvalSubject, SweepAxis};
use crate::optim::{write_history_csv, TransitionDataset};
use crate::pipeline::{
    adapt, collect_demos, train_base_policy, ScriptedExpert, TrainedBase,
};
use crate::policy::{load_bundle, save_bundle, BasePolicy, SwitchingPolicy, TargetPolicy};
use crate::rollout::{run_episode, PolicyActor, RolloutOptions};
use crate::{Error, Result};

/// Exit code for an error: 1 for gate/optimizer/method failures, 2 for
/// usage, config, and I/O problems.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::PretrainGate { .. } | Error::Optim(_) | Error::Collect(_) => 1,
        Error::Config(_)
        | Error::Shape(_)
        | Error::EmptyDataset
        | Error::Io(_)
        | Error::Json(_)
        | Error::Csv(_) => 2,
    }
}

/// Output directory layout.
pub struct OutDirs {
    pub policies: PathBuf,
    pub datasets: PathBuf,
    pub bundles: PathBuf,
    pub reports: PathBuf,
}

impl OutDirs {
    pub fn create(out: &Path) -> Result<Self> {
        let dirs = Self {
            policies: out.join("policies"),
            datasets: out.join("datasets"),
            bundles: out.join("bundles"),
            reports: out.join("reports"),
        };
        for d in [&dirs.policies, &dirs.datasets, &dirs.bundles, &dirs.reports] {
            std::fs::create_dir_all(d)?;
        }
        Ok(dirs)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let file = std::fs::File::create(path)?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), value)?;
    Ok(())
}

/// Loads the config and applies the seed override.
pub fn load_config(path: &Path, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    if let Some(seed) = seed_override {
        config.seed = seed;
    }
    Ok(config)
}

#[derive(Serialize)]
struct Provenance<'a> {
    seed: u64,
    config_hash: &'a str,
}

#[derive(Serialize)]
struct PretrainSummary<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    tasks: Vec<PretrainTaskEntry>,
}

#[derive(Serialize)]
struct PretrainTaskEntry {
    task_id: String,
    policy_file: String,
    success_rate: f64,
    gate_passed: bool,
}

/// Trains one policy per base task. Writes every policy and report even if
/// a gate is missed; returns an error (exit 1) if any base misses the gate.
pub fn cmd_pretrain(config: &ExperimentConfig, out: &Path) -> Result<()> {
    let dirs = OutDirs::create(out)?;
    let hash = config.config_hash();
    let env = CarGoal::new(config.env.clone());
    let mut entries = Vec::new();
    let mut failures = 0usize;
    for (i, task) in config.base_tasks.iter().enumerate() {
        let spec = config.pretrain_spec(i);
        let tag = format!("{}_s{}_{hash}", task.task_id, config.seed);
        let policy_file = format!("base_{tag}.json");
        let (policy, success_rate, history) = match train_base_policy(&env, task, &spec) {
            Ok(TrainedBase {
                policy,
                report,
                history,
            }) => (policy, report.success_rate, Some(history)),
            Err(Error::PretrainGate {
                success_rate,
                policy,
                ..
            }) => {
                failures += 1;
                (*policy, success_rate, None)
            }
            Err(e) => return Err(e),
        };
        policy.save(&dirs.policies.join(&policy_file))?;
        if let Some(history) = &history {
            write_history_csv(
                &dirs.reports.join(format!("pretrain_{tag}_history.csv")),
                history,
            )?;
        }
        let gate_passed = success_rate >= spec.gate_success;
        println!(
            "pretrain {}: success {:.2} on own task ({})",
            task.task_id,
            success_rate,
            if gate_passed { "gate passed" } else { "GATE MISSED" }
        );
        entries.push(PretrainTaskEntry {
            task_id: task.task_id.clone(),
            policy_file,
            success_rate,
            gate_passed,
        });
    }
    write_json(
        &dirs.reports.join(format!("pretrain_s{}_{hash}.json", config.seed)),
        &PretrainSummary {
            provenance: Provenance {
                seed: config.seed,
                config_hash: &hash,
            },
            tasks: entries,
        },
    )?;
    if failures > 0 {
        return Err(Error::Optim(format!(
            "{failures} base task(s) missed the pre-training success gate"
        )));
    }
    Ok(())
}

/// Collects expert demonstrations on the target task.
pub fn cmd_collect(config: &ExperimentConfig, out: &Path) -> Result<()> {
    if config.adapt.demo_budget == 0 {
        return Err(Error::Config("demo_budget must be > 0".into()));
    }
    let dirs = OutDirs::create(out)?;
    let hash = config.config_hash();
    let env = CarGoal::new(config.env.clone());
    let task = &config.target_task;
    let mut expert = ScriptedExpert::new(task.clone());
    let dataset = collect_demos(
        &env,
        &mut expert,
        task,
        config.adapt.demo_budget,
        config.collect_seed(),
        "expert",
    )?;
    let file = dirs.datasets.join(format!(
        "demos_{}_s{}_{hash}.jsonl",
        task.task_id, config.seed
    ));
    dataset.save_jsonl(&file)?;
    println!(
        "collected {} transitions over {} episodes -> {}",
        dataset.len(),
        dataset.transitions.last().map(|t| t.episode_id + 1).unwrap_or(0),
        file.display()
    );
    Ok(())
}

fn load_bases(paths: &[PathBuf]) -> Result<Vec<Arc<BasePolicy>>> {
    if paths.is_empty() {
        return Err(Error::Config("at least one --base policy file is required".into()));
    }
    paths
        .iter()
        .map(|p| {
            BasePolicy::load(p)
                .map(Arc::new)
                .map_err(|e| Error::Config(format!("cannot load base policy {}: {e}", p.display())))
        })
        .collect()
}

/// Relative path from `dir` to `target`, so bundles stay portable when the
/// output tree moves as a whole.
fn relative_to(dir: &Path, target: &Path) -> Result<String> {
    let dir = dir.canonicalize()?;
    let target = target.canonicalize()?;
    let dir_parts: Vec<_> = dir.components().collect();
    let target_parts: Vec<_> = target.components().collect();
    let common = dir_parts
        .iter()
        .zip(&target_parts)
        .take_while(|(a, b)| a == b)
        .count();
    let mut rel = PathBuf::new();
    for _ in common..dir_parts.len() {
        rel.push("..");
    }
    for part in &target_parts[common..] {
        rel.push(part);
    }
    Ok(rel.to_string_lossy().into_owned())
}

#[derive(Serialize)]
struct AdaptReportFile<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    bundle_file: String,
    report: crate::pipeline::AdaptReport,
    config_echo: &'a crate::config::AdaptSettings,
}

/// Trains a target policy from base policy files and a demonstration
/// dataset, writing the bundle and its report.
pub fn cmd_adapt(
    config: &ExperimentConfig,
    base_paths: &[PathBuf],
    dataset_path: &Path,
    method_override: Option<&str>,
    out: &Path,
) -> Result<()> {
    let mut spec = config.adapt_spec()?;
    if let Some(m) = method_override {
        spec.method = m.parse()?;
    }
    let bases = load_bases(base_paths)?;
    let dataset = TransitionDataset::load_jsonl(dataset_path)?;
    let dirs = OutDirs::create(out)?;
    let hash = config.config_hash();

    let outcome = adapt(&bases, &dataset, &spec)?;
    let tag = format!("{}_s{}_{hash}", spec.method.as_str(), config.seed);
    let bundle_file = format!("{tag}.json");
    let bundle_path = dirs.bundles.join(&bundle_file);

    // The bundle references the base files it actually uses.
    let used: Vec<usize> = match outcome.report.chosen_base {
        Some(i) => vec![i],
        None => (0..bases.len()).collect(),
    };
    let base_files: Vec<String> = used
        .iter()
        .map(|&i| relative_to(&dirs.bundles, &base_paths[i]))
        .collect::<Result<_>>()?;
    save_bundle(&bundle_path, &outcome.policy, &base_files, outcome.report.chosen_base)?;

    for (i, history) in outcome.cem_histories.iter().enumerate() {
        write_history_csv(&dirs.reports.join(format!("adapt_{tag}_base{i}_history.csv")), history)?;
    }
    for (i, losses) in outcome.epoch_losses.iter().enumerate() {
        let rows: Vec<crate::optim::CemIterStats> = losses
            .iter()
            .enumerate()
            .map(|(e, &l)| crate::optim::CemIterStats {
                iteration: e,
                best: l,
                mean: l,
            })
            .collect();
        write_history_csv(&dirs.reports.join(format!("adapt_{tag}_sgd{i}_history.csv")), &rows)?;
    }
    write_json(
        &dirs.reports.join(format!("adapt_{tag}.json")),
        &AdaptReportFile {
            provenance: Provenance {
                seed: config.seed,
                config_hash: &hash,
            },
            bundle_file,
            report: outcome.report.clone(),
            config_echo: &config.adapt,
        },
    )?;
    match outcome.report.chosen_base {
        Some(i) => println!(
            "adapt {}: chose base {} (loss {:.4}) -> {}",
            outcome.report.method, i, outcome.report.final_loss, bundle_path.display()
        ),
        None => println!(
            "adapt {}: final loss {:.4} -> {}",
            outcome.report.method, outcome.report.final_loss, bundle_path.display()
        ),
    }
    Ok(())
}

#[derive(Serialize)]
struct EvalReportFile<'a> {
    #[serde(flatten)]
    provenance: Provenance<'a>,
    subject: String,
    task_id: String,
    report: EvalReport,
}

/// What to evaluate, resolved from CLI flags.
pub enum EvalTarget {
    Bundle(PathBuf),
    BasePolicy(PathBuf),
    Expert,
}

/// Evaluates a bundle, a bare base policy, or the scripted expert on the
/// target task, writing the report and printing a one-line summary.
pub fn cmd_eval(
    config: &ExperimentConfig,
    target: EvalTarget,
    episodes_override: Option<usize>,
    dump_trajectories: bool,
    out: &Path,
) -> Result<()> {
    let mut opts = config.eval_options()?;
    if let Some(n) = episodes_override {
        opts.n_episodes = n;
    }
    if opts.n_episodes == 0 {
        return Err(Error::Config("evaluation needs n_episodes >= 1".into()));
    }
    let dirs = OutDirs::create(out)?;
    let hash = config.config_hash();
    let env = CarGoal::new(config.env.clone());
    let task = &config.target_task;

    let (subject_name, policy, expert): (String, Option<TargetPolicy>, Option<ScriptedExpert>) =
        match target {
            EvalTarget::Bundle(path) => {
                let (policy, record) = load_bundle(&path)?;
                (record.kind, Some(policy), None)
            }
            EvalTarget::BasePolicy(path) => {
                let base = BasePolicy::load(&path).map_err(|e| {
                    Error::Config(format!("cannot load base policy {}: {e}", path.display()))
                })?;
                ("base".into(), Some(TargetPolicy::Base(Arc::new(base))), None)
            }
            EvalTarget::Expert => ("expert".into(), None, Some(ScriptedExpert::new(task.clone()))),
        };

    let subject = match (&policy, &expert) {
        (Some(p), _) => EvalSubject::Policy(p),
        (_, Some(e)) => EvalSubject::Expert(e),
        _ => unreachable!(),
    };
    let report = evaluate(&env, task, subject, &opts)?;

    let tag = format!("{subject_name}_{}_s{}_{hash}", task.task_id, config.seed);
    write_json(
        &dirs.reports.join(format!("eval_{tag}.json")),
        &EvalReportFile {
            provenance: Provenance {
                seed: config.seed,
                config_hash: &hash,
            },
            subject: subject_name.clone(),
            task_id: task.task_id.clone(),
            report: report.clone(),
        },
    )?;

    if dump_trajectories {
        dump_eval_trajectories(&env, task, &policy, &expert, &opts, &dirs, &tag)?;
    }

    match report.switching_rate {
        Some(rate) => println!(
            "eval {subject_name}: success {:.2} (95% CI [{:.3}, {:.3}]), switching rate {:.2}/100 steps",
            report.success_rate, report.ci_low, report.ci_high, rate
        ),
        None => println!(
            "eval {subject_name}: success {:.2} (95% CI [{:.3}, {:.3}])",
            report.success_rate, report.ci_low, report.ci_high
        ),
    }
    Ok(())
}

fn dump_eval_trajectories(
    env: &CarGoal,
    task: &crate::env::Task,
    policy: &Option<TargetPolicy>,
    expert: &Option<ScriptedExpert>,
    opts: &crate::eval::EvalOptions,
    dirs: &OutDirs,
    tag: &str,
) -> Result<()> {
    let n = opts.n_episodes.min(5);
    let rollout_opts = RolloutOptions {
        horizon: opts.horizon.unwrap_or(env.params.max_steps),
        record_observations: true,
        record_weights: false,
    };
    for i in 0..n {
        let reset_seed = crate::math::derive_seed(opts.seed, 2 * i as u64);
        let action_seed = crate::math::derive_seed(opts.seed, 2 * i as u64 + 1);
        let log = match (policy, expert) {
            (Some(p), _) => {
                let mut actor = PolicyActor::new(p, opts.mode);
                run_episode(env, task, &mut actor, reset_seed, action_seed, &rollout_opts)?
            }
            (_, Some(e)) => {
                let mut actor = e.clone();
                run_episode(env, task, &mut actor, reset_seed, action_seed, &rollout_opts)?
            }
            _ => unreachable!(),
        };
        let rows: Vec<TrajectoryRow> = (0..log.steps as usize)
            .map(|s| {
                let obs = &log.observations[s].0;
                TrajectoryRow {
                    step: s as u32,
                    x: obs[0],
                    y: obs[1],
                    heading: obs[3].atan2(obs[2]),
                    speed: obs[4] * env.params.v_max,
                    steer: log.actions[s].steer,
                    throttle: log.actions[s].throttle,
                    reward: log.rewards[s],
                    done: s + 1 == log.steps as usize,
                    success: log.success && s + 1 == log.steps as usize,
                }
            })
            .collect();
        crate::env::write_trajectory_csv(
            &dirs.reports.join(format!("traj_{tag}_ep{i}.csv")),
            &rows,
        )?;
    }
    Ok(())
}

/// Runs the configured sweep over epsilon, alpha, or demo budget.
pub fn cmd_sweep(
    config: &ExperimentConfig,
    base_paths: &[PathBuf],
    dataset_path: &Path,
    bundle_path: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let sweep_settings = config
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("config has no sweep section".into()))?;
    let axis: SweepAxis = sweep_settings.axis.parse()?;
    let bases = load_bases(base_paths)?;
    let dataset = TransitionDataset::load_jsonl(dataset_path)?;
    let dirs = OutDirs::create(out)?;
    let hash = config.config_hash();
    let env = CarGoal::new(config.env.clone());

    let reuse: Option<SwitchingPolicy> = match bundle_path {
        Some(path) => match load_bundle(path)?.0 {
            TargetPolicy::Switching(p) => Some(p),
            _ => {
                return Err(Error::Config(
                    "sweep --bundle must reference a switching bundle".into(),
                ))
            }
        },
        None => None,
    };

    let mut adapt_spec = config.adapt_spec()?;
    if axis == SweepAxis::Epsilon || axis == SweepAxis::Alpha {
        // Grid rows share one switching setup; the axis overrides the knob.
        if !matches!(
            adapt_spec.method,
            crate::pipeline::AdaptMethod::SoftSwitch | crate::pipeline::AdaptMethod::HardSwitch
        ) {
            adapt_spec.method = crate::pipeline::AdaptMethod::HardSwitch;
        }
    }
    let eval_opts = config.sweep_eval_options()?;
    let rows = crate::eval::sweep(
        &env,
        &config.target_task,
        &bases,
        &dataset,
        &adapt_spec,
        &eval_opts,
        axis,
        &sweep_settings.values,
        reuse.as_ref(),
    )?;
    let path = dirs.reports.join(format!(
        "sweep_{}_s{}_{hash}.csv",
        sweep_settings.axis, config.seed
    ));
    crate::eval::write_sweep_csv(&path, &rows)?;
    println!("sweep {}: {} rows -> {}", sweep_settings.axis, rows.len(), path.display());
    Ok(())
}
