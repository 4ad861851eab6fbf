//! Derivative-free and gradient-based trainers: the cross-entropy method
//! over flat parameter vectors, plain minibatch SGD, and the finite
//! difference oracle both are checked against.

pub mod dataset;
pub mod loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::math::rng::{derive_seed, rng_from_seed, standard_normal};
use crate::{Error, Result};

pub use dataset::{DatasetMeta, Transition, TransitionDataset};
pub use loss::{bc_loss_alignment, switching_loss, switching_loss_terms, SwitchingLossCache};

/// Cross-entropy method configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elite_frac: f64,
    pub iterations: usize,
    pub init_std: f64,
    pub std_floor: f64,
    pub seed: u64,
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 10 {
            return Err(Error::Config("cem population must be >= 10".into()));
        }
        if !(self.elite_frac > 0.0 && self.elite_frac <= 0.5) {
            return Err(Error::Config("cem elite_frac must be in (0, 0.5]".into()));
        }
        if !(self.std_floor > 0.0) {
            return Err(Error::Config("cem std_floor must be > 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::Config("cem needs at least one iteration".into()));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::Config("cem init_std must be > 0".into()));
        }
        Ok(())
    }

    pub fn n_elite(&self) -> usize {
        ((self.population as f64 * self.elite_frac).round() as usize).max(1)
    }
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elite_frac: 0.125,
            iterations: 100,
            init_std: 0.5,
            std_floor: 1e-3,
            seed: 0,
        }
    }
}

/// Per-iteration CEM statistics. `best` is the best objective seen so far
/// (non-increasing by construction); `mean` is this iteration's population
/// mean over finite values.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CemIterStats {
    pub iteration: usize,
    pub best: f64,
    pub mean: f64,
}

#[derive(Clone, Debug)]
pub struct CemOutcome {
    pub best_params: Vec<f64>,
    pub best_objective: f64,
    pub history: Vec<CemIterStats>,
}

/// Minimizes `objective` with a diagonal-Gaussian cross-entropy method.
///
/// Each iteration samples a population around the current mean, ranks it,
/// and refits mean/std to the `elite_frac` lowest-objective samples, with
/// the std floored at `std_floor`. Non-finite objective values are ranked
/// worst; an all-non-finite population aborts. Deterministic given the
/// config seed; population members are evaluated in parallel but ranked by
/// index, so thread count does not change the result.
pub fn cem_optimize<F>(objective: F, init_mean: &[f64], config: &CemConfig) -> Result<CemOutcome>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    config.validate()?;
    if init_mean.is_empty() {
        return Err(Error::Config("cem needs at least one dimension".into()));
    }
    let dim = init_mean.len();
    let n_elite = config.n_elite();

    let mut mean = init_mean.to_vec();
    let mut std = vec![config.init_std; dim];
    let mut rng = rng_from_seed(config.seed);

    // Seed best-ever with the initial mean so identity-style inits are never
    // lost to an unlucky first population.
    let mut best_params = mean.clone();
    let mut best_objective = objective(&mean);
    if !best_objective.is_finite() {
        best_objective = f64::INFINITY;
    }

    let mut history = Vec::with_capacity(config.iterations);
    for iteration in 0..config.iterations {
        // Sampling stays on the main thread: the draw order defines the run.
        let population: Vec<Vec<f64>> = (0..config.population)
            .map(|_| {
                mean.iter()
                    .zip(&std)
                    .map(|(&m, &s)| m + s * standard_normal(&mut rng))
                    .collect()
            })
            .collect();

        let values: Vec<f64> = population.par_iter().map(|x| objective(x)).collect();

        let mut order: Vec<usize> = (0..config.population).collect();
        order.sort_by(|&a, &b| {
            let va = if values[a].is_finite() { values[a] } else { f64::INFINITY };
            let vb = if values[b].is_finite() { values[b] } else { f64::INFINITY };
            va.partial_cmp(&vb).unwrap_or(std::cmp::Ordering::Equal)
        });

        if !values[order[0]].is_finite() {
            return Err(Error::Optim(format!(
                "cem iteration {iteration}: every candidate returned a non-finite objective"
            )));
        }

        if values[order[0]] < best_objective {
            best_objective = values[order[0]];
            best_params = population[order[0]].clone();
        }

        let elites = &order[..n_elite];
        for d in 0..dim {
            let m: f64 = elites.iter().map(|&i| population[i][d]).sum::<f64>() / n_elite as f64;
            let var: f64 = elites
                .iter()
                .map(|&i| (population[i][d] - m).powi(2))
                .sum::<f64>()
                / n_elite as f64;
            mean[d] = m;
            std[d] = var.sqrt().max(config.std_floor);
        }

        let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
        let pop_mean = finite.iter().sum::<f64>() / finite.len() as f64;
        history.push(CemIterStats {
            iteration,
            best: best_objective,
            mean: pop_mean,
        });
    }

    Ok(CemOutcome {
        best_params,
        best_objective,
        history,
    })
}

/// Writes a CEM (or any iteration/best/mean) history as CSV.
pub fn write_history_csv(path: &std::path::Path, history: &[CemIterStats]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["iteration", "best", "mean"])?;
    for row in history {
        writer.write_record([
            row.iteration.to_string(),
            row.best.to_string(),
            row.mean.to_string(),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// SGD configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Verify the caller's gradient against finite differences on the first
    /// batch. Callers whose loss uses detached targets (the temporal term of
    /// the switching loss) run their own frozen-target check instead, since
    /// perturbing the parameters would move the targets and invalidate the
    /// comparison.
    #[serde(default = "default_true")]
    pub check_gradient: bool,
}

fn default_true() -> bool {
    true
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            batch_size: 64,
            epochs: 200,
            seed: 0,
            check_gradient: true,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SgdOutcome {
    pub params: Vec<f64>,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// Plain minibatch SGD over shuffled epochs.
///
/// `loss_and_grad(params, batch)` returns the mean loss over the given
/// record indices and its gradient. The provided gradient is verified
/// against central finite differences on the first batch before any step is
/// taken. A non-finite loss mid-training rolls the epoch back and halves the
/// learning rate, at most three times, then aborts.
pub fn sgd_train<F>(
    mut loss_and_grad: F,
    n_records: usize,
    init: &[f64],
    config: &SgdConfig,
) -> Result<SgdOutcome>
where
    F: FnMut(&[f64], &[usize]) -> (f64, Vec<f64>),
{
    if n_records == 0 {
        return Err(Error::EmptyDataset);
    }
    if !(config.learning_rate >= 0.0 && config.learning_rate.is_finite()) {
        return Err(Error::Config("sgd learning_rate must be finite and >= 0".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::Config("sgd batch_size must be >= 1".into()));
    }
    if config.epochs == 0 {
        return Err(Error::Config("sgd needs at least one epoch".into()));
    }

    let dim = init.len();
    let mut params = init.to_vec();
    let mut lr = config.learning_rate;

    // Gradient sanity check on the first batch of the first epoch.
    if config.check_gradient {
        let indices = shuffled_indices(n_records, config.seed, 0);
        let batch = &indices[..config.batch_size.min(n_records)];
        let (loss0, grad0) = loss_and_grad(&params, batch);
        if !loss0.is_finite() {
            return Err(Error::Optim("sgd: loss is non-finite at init".into()));
        }
        let fd = finite_diff_grad(|p| loss_and_grad(p, batch).0, &params, 1e-5);
        if let Some((i, a, f)) = max_grad_mismatch(&grad0, &fd) {
            return Err(Error::Optim(format!(
                "sgd: gradient check failed at param {i}: analytic {a} vs finite-diff {f}"
            )));
        }
        debug_assert_eq!(grad0.len(), dim);
    }

    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut retries = 0usize;
    let mut epoch = 0usize;
    while epoch < config.epochs {
        let snapshot = params.clone();
        let indices = shuffled_indices(n_records, config.seed, epoch as u64);
        let mut total_loss = 0.0;
        let mut total_count = 0usize;
        let mut failed = false;
        for batch in indices.chunks(config.batch_size) {
            let (loss, grad) = loss_and_grad(&params, batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                failed = true;
                break;
            }
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            total_loss += loss * batch.len() as f64;
            total_count += batch.len();
        }
        if failed {
            retries += 1;
            if retries > 3 {
                return Err(Error::Optim(format!(
                    "sgd: non-finite loss persisted after {retries} learning-rate halvings"
                )));
            }
            params = snapshot;
            lr *= 0.5;
            continue;
        }
        epoch_losses.push(total_loss / total_count as f64);
        epoch += 1;
    }

    Ok(SgdOutcome {
        params,
        epoch_losses,
    })
}

/// First coordinate where analytic and finite-difference gradients disagree
/// by more than 1e-4 relative error, if any.
pub fn max_grad_mismatch(analytic: &[f64], fd: &[f64]) -> Option<(usize, f64, f64)> {
    for (i, (&a, &f)) in analytic.iter().zip(fd).enumerate() {
        let scale = a.abs().max(f.abs());
        let err = if scale < 1e-6 { (a - f).abs() } else { (a - f).abs() / scale };
        if err > 1e-4 {
            return Some((i, a, f));
        }
    }
    None
}

fn shuffled_indices(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = rng_from_seed(derive_seed(seed, epoch));
    indices.shuffle(&mut rng);
    indices
}

/// Central finite differences, one coordinate at a time.
pub fn finite_diff_grad<F>(mut objective: F, params: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    assert!(step > 0.0, "finite difference step must be > 0");
    let mut grad = Vec::with_capacity(params.len());
    let mut work = params.to_vec();
    for i in 0..params.len() {
        let orig = work[i];
        work[i] = orig + step;
        let plus = objective(&work);
        work[i] = orig - step;
        let minus = objective(&work);
        work[i] = orig;
        grad.push((plus - minus) / (2.0 * step));
    }
    grad
}
