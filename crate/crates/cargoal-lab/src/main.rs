use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use cargoal_lab::cli::{self, EvalTarget};
use cargoal_lab::Error;

#[derive(Parser)]
#[command(
    name = "cargoal-lab",
    version,
    about = "Few-shot policy transfer laboratory on a 2D goal-reaching driving task"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config JSON.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (policies/, datasets/, bundles/, reports/).
    #[arg(long)]
    out: PathBuf,
    /// Override the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Cap worker threads (1 and N give identical outputs).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one base policy per base task with CEM policy search.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Collect expert demonstrations on the target task.
    Collect {
        #[command(flatten)]
        common: Common,
    },
    /// Train a target policy from base policies and demonstrations.
    Adapt {
        #[command(flatten)]
        common: Common,
        /// Base policy JSON file (repeat per base).
        #[arg(long = "base", required = true)]
        bases: Vec<PathBuf>,
        /// Demonstration dataset (.jsonl with sidecar metadata).
        #[arg(long)]
        dataset: PathBuf,
        /// Override the config's adaptation method.
        #[arg(long)]
        method: Option<String>,
    },
    /// Evaluate a policy bundle, a bare base policy, or the scripted expert.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Policy bundle to evaluate.
        #[arg(long, conflicts_with_all = ["base_policy", "expert"])]
        bundle: Option<PathBuf>,
        /// Bare base policy to evaluate.
        #[arg(long, conflicts_with = "expert")]
        base_policy: Option<PathBuf>,
        /// Evaluate the goal-aware scripted expert baseline.
        #[arg(long)]
        expert: bool,
        /// Override the config's episode count.
        #[arg(long)]
        episodes: Option<usize>,
        /// Also write the first few episode trajectories as CSV.
        #[arg(long)]
        trajectories: bool,
    },
    /// Run the configured grid sweep (epsilon, alpha, or demo_budget).
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Base policy JSON file (repeat per base).
        #[arg(long = "base", required = true)]
        bases: Vec<PathBuf>,
        /// Demonstration dataset (.jsonl with sidecar metadata).
        #[arg(long)]
        dataset: PathBuf,
        /// Reuse a trained switching bundle for epsilon sweeps.
        #[arg(long)]
        bundle: Option<PathBuf>,
    },
}

fn setup_threads(threads: Option<usize>) {
    if let Some(n) = threads {
        // Ignore the error if a pool already exists (tests, repeated calls).
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
}

fn run(command: Command) -> cargoal_lab::Result<()> {
    match command {
        Command::Pretrain { common } => {
            setup_threads(common.threads);
            let config = cli::load_config(&common.config, common.seed)?;
            cli::cmd_pretrain(&config, &common.out)
        }
        Command::Collect { common } => {
            setup_threads(common.threads);
            let config = cli::load_config(&common.config, common.seed)?;
            cli::cmd_collect(&config, &common.out)
        }
        Command::Adapt {
            common,
            bases,
            dataset,
            method,
        } => {
            setup_threads(common.threads);
            let config = cli::load_config(&common.config, common.seed)?;
            cli::cmd_adapt(&config, &bases, &dataset, method.as_deref(), &common.out)
        }
        Command::Eval {
            common,
            bundle,
            base_policy,
            expert,
            episodes,
            trajectories,
        } => {
            setup_threads(common.threads);
            let config = cli::load_config(&common.config, common.seed)?;
            let target = match (bundle, base_policy, expert) {
                (Some(path), _, _) => EvalTarget::Bundle(path),
                (_, Some(path), _) => EvalTarget::BasePolicy(path),
                (_, _, true) => EvalTarget::Expert,
                _ => {
                    return Err(Error::Config(
                        "eval needs one of --bundle, --base-policy, or --expert".into(),
                    ))
                }
            };
            cli::cmd_eval(&config, target, episodes, trajectories, &common.out)
        }
        Command::Sweep {
            common,
            bases,
            dataset,
            bundle,
        } => {
            setup_threads(common.threads);
            let config = cli::load_config(&common.config, common.seed)?;
            cli::cmd_sweep(&config, &bases, &dataset, bundle.as_deref(), &common.out)
        }
    }
}

fn main() {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => {}
        Err(err) => {
            eprintln!("error: {err}");
            std::process::exit(cli::exit_code(&err));
        }
    }
}
