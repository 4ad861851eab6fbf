//! Diagonal and full-covariance Gaussian log densities.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

const LN_2PI: f64 = 1.8378770664093453;

/// Mean and per-dimension log standard deviation of a diagonal Gaussian.
/// Log-stds are clamped to [-10, 2] on construction so downstream
/// likelihoods stay finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianHead {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl GaussianHead {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::Shape(format!(
                "gaussian head: mean dim {} vs log_std dim {}",
                mean.len(),
                log_std.len()
            )));
        }
        let log_std = log_std
            .into_iter()
            .map(|v| v.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok(Self { mean, log_std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sum over dimensions of the diagonal Gaussian log density at `action`.
pub fn gaussian_log_prob(head: &GaussianHead, action: &[f64]) -> f64 {
    assert_eq!(action.len(), head.dim(), "action dim must match head dim");
    let mut lp = 0.0;
    for ((a, m), ls) in action.iter().zip(&head.mean).zip(&head.log_std) {
        let z = (a - m) / ls.exp();
        lp += -0.5 * LN_2PI - ls - 0.5 * z * z;
    }
    lp
}

/// Log density of a full-covariance Gaussian (row-major d x d covariance)
/// via Cholesky. Returns -inf when the covariance is not positive definite,
/// which ranks such parameters as worthless in rank-based optimizers.
pub fn mvn_log_prob(mean: &[f64], cov: &[f64], x: &[f64]) -> f64 {
    let d = mean.len();
    debug_assert_eq!(cov.len(), d * d);
    debug_assert_eq!(x.len(), d);

    // Cholesky: cov = L L^T, lower triangular.
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut acc = cov[i * d + j];
            for k in 0..j {
                acc -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if acc <= 0.0 || !acc.is_finite() {
                    return f64::NEG_INFINITY;
                }
                l[i * d + i] = acc.sqrt();
            } else {
                l[i * d + j] = acc / l[j * d + j];
            }
        }
    }
    // Solve L y = (x - mean); quadratic form is |y|^2.
    let mut y = vec![0.0; d];
    for i in 0..d {
        let mut acc = x[i] - mean[i];
        for k in 0..i {
            acc -= l[i * d + k] * y[k];
        }
        y[i] = acc / l[i * d + i];
    }
    let quad: f64 = y.iter().map(|v| v * v).sum();
    let log_det: f64 = (0..d).map(|i| l[i * d + i].ln()).sum::<f64>() * 2.0;
    -0.5 * (d as f64 * LN_2PI + log_det + quad)
}
