//! Seeded episode rollouts shared by demonstration collection, objective
//! evaluation during pre-training, and the evaluation harness.

use crate::env::{Action, CarGoal, Observation, Task};
use crate::math::rng::{rng_from_seed, Rng};
use crate::policy::{ActMode, EpisodeState, TargetPolicy};
use crate::Result;

/// Anything that can drive the car for one episode.
pub trait Actor {
    /// Called at episode start, before the first action.
    fn begin_episode(&mut self);
    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<ActorStep>;
}

#[derive(Clone, Debug)]
pub struct ActorStep {
    pub action: Action,
    pub weights: Option<Vec<f64>>,
    pub selected: Option<usize>,
}

/// Adapts a target policy to the actor interface, holding its per-episode
/// state (hard-switching incumbent).
pub struct PolicyActor<'a> {
    pub policy: &'a TargetPolicy,
    pub mode: ActMode,
    episode: EpisodeState,
}

impl<'a> PolicyActor<'a> {
    pub fn new(policy: &'a TargetPolicy, mode: ActMode) -> Self {
        Self {
            policy,
            mode,
            episode: EpisodeState::default(),
        }
    }
}

impl Actor for PolicyActor<'_> {
    fn begin_episode(&mut self) {
        self.episode = self.policy.begin_episode();
    }

    fn act(&mut self, obs: &Observation, rng: &mut Rng) -> Result<ActorStep> {
        let step = self.policy.act(&mut self.episode, obs.as_slice(), self.mode, rng)?;
        Ok(ActorStep {
            action: step.action,
            weights: step.weights,
            selected: step.selected,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    /// Hard step cap for this rollout; episodes also end on env termination.
    pub horizon: u32,
    pub record_observations: bool,
    pub record_weights: bool,
}

impl RolloutOptions {
    pub fn plain(horizon: u32) -> Self {
        Self {
            horizon,
            record_observations: false,
            record_weights: false,
        }
    }
}

/// Everything recorded about one episode.
#[derive(Clone, Debug, Default)]
pub struct EpisodeLog {
    /// Observations including the initial one (steps + 1 entries), present
    /// when requested.
    pub observations: Vec<Observation>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    /// Per-step base selections (switching policies, when requested).
    pub selections: Vec<usize>,
    /// Per-step weights (switching policies, when requested).
    pub weights: Vec<Vec<f64>>,
    pub total_reward: f64,
    pub steps: u32,
    pub success: bool,
}

/// Runs one episode. `reset_seed` drives the initial state, `action_seed`
/// drives any sampling the actor does; splitting them keeps open-loop
/// comparisons possible.
pub fn run_episode(
    env: &CarGoal,
    task: &Task,
    actor: &mut dyn Actor,
    reset_seed: u64,
    action_seed: u64,
    opts: &RolloutOptions,
) -> Result<EpisodeLog> {
    let mut log = EpisodeLog::default();
    let (mut state, mut obs) = env.reset(task, reset_seed);
    let mut rng = rng_from_seed(action_seed);
    actor.begin_episode();
    if opts.record_observations {
        log.observations.push(obs);
    }
    loop {
        let step = actor.act(&obs, &mut rng)?;
        let (next_state, result) = env.step(&state, &step.action, task);
        log.total_reward += result.reward;
        log.steps += 1;
        if opts.record_observations {
            log.actions.push(step.action);
            log.rewards.push(result.reward);
            log.observations.push(result.obs);
        }
        if opts.record_weights {
            if let Some(sel) = step.selected {
                log.selections.push(sel);
            }
            if let Some(w) = step.weights {
                log.weights.push(w);
            }
        }
        state = next_state;
        obs = result.obs;
        if result.success {
            log.success = true;
            break;
        }
        if result.done || log.steps >= opts.horizon {
            break;
        }
    }
    Ok(log)
}
