//! A self-contained laboratory for few-shot policy transfer on a 2D
//! goal-reaching driving task.
//!
//! Base policies are pre-trained per goal with direct policy search, then
//! adapted to a held-out goal from a small expert demonstration dataset
//! using low-dimensional target policy classes: affine observation/action
//! alignment, action re-alignment on the policy latent, and soft/hard
//! switching across base policies with hysteresis.
//!
//! The crate is organised around the pipeline stages:
//!
//! - [`math`]: dense MLP forward/backward, Gaussian densities, affine maps,
//!   seedable RNG streams.
//! - [`env`]: the CarGoal environment (kinematic car, shaped goal reward).
//! - [`policy`]: base Gaussian-MLP policies and the target policy classes.
//! - [`optim`]: cross-entropy method, minibatch SGD, behavioral-cloning and
//!   switching losses, transition datasets.
//! - [`pipeline`]: pre-training, the scripted expert, demonstration
//!   collection, and the adaptation drivers.
//! - [`eval`]: seeded rollout evaluation, Wilson intervals, switching-rate
//!   measurement, and parameter sweeps.
//! - [`config`] / [`cli`]: the experiment file format and the command-line
//!   entry points.

pub mod cli;
pub mod config;
pub mod env;
pub mod eval;
pub mod math;
pub mod optim;
pub mod pipeline;
pub mod policy;
pub mod rollout;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Invalid configuration or precondition violation detectable up front.
    #[error("configuration error: {0}")]
    Config(String),
    /// Tensor/vector shape mismatch.
    #[error("shape mismatch: {0}")]
    Shape(String),
    /// An optimizer could not make progress or diverged.
    #[error("optimization failed: {0}")]
    Optim(String),
    /// Pre-training finished but the best policy missed the success gate.
    /// Carries the best policy found so callers can still inspect or save it.
    #[error("pre-training gate missed: success rate {success_rate:.3} < {required:.3}")]
    PretrainGate {
        success_rate: f64,
        required: f64,
        policy: Box<policy::BasePolicy>,
    },
    /// An actor failed to produce any successful episode within its budget.
    #[error("collection failed: {0}")]
    Collect(String),
    #[error("empty dataset")]
    EmptyDataset,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
