//! Minimal dense numerics shared by every other module.

pub mod affine;
pub mod gaussian;
pub mod mlp;
pub mod rng;

pub use affine::AffineTransform;
pub use gaussian::{gaussian_log_prob, mvn_log_prob, GaussianHead};
pub use mlp::{mlp_backward, mlp_forward, Activation, LayerParams, MlpForward, MlpGrads, MlpParams};
pub use rng::{derive_seed, rng_from_seed, standard_normal, Rng};

/// Numerically stable softmax (max-subtraction before exponentiation).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "softmax needs a nonempty input");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// log softmax(logits), stable for large magnitudes.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    assert!(!logits.is_empty(), "log_softmax needs a nonempty input");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_sum: f64 = logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - max - log_sum).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits_give_uniform_probabilities() {
        let p = softmax(&[0.0, 0.0, 0.0]);
        for v in &p {
            assert!((v - 1.0 / 3.0).abs() <= 1e-15);
        }
    }

    #[test]
    fn large_logits_do_not_overflow() {
        let p = softmax(&[1000.0, 0.0]);
        assert!(p[0] > 1.0 - 1e-12 && p[1] < 1e-12);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn exact_exponentials() {
        let p = softmax(&[2.0f64.ln(), 1.0f64.ln(), 1.0f64.ln()]);
        assert!((p[0] - 0.5).abs() <= 1e-15);
        assert!((p[1] - 0.25).abs() <= 1e-15);
        assert!((p[2] - 0.25).abs() <= 1e-15);
    }

    proptest! {
        #[test]
        fn softmax_is_a_distribution(logits in prop::collection::vec(-50.0..50.0f64, 1..8)) {
            let p = softmax(&logits);
            prop_assert!(p.iter().all(|&v| v >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(
            logits in prop::collection::vec(-30.0..30.0f64, 1..8),
            shift in -100.0..100.0f64,
        ) {
            let p = softmax(&logits);
            let shifted: Vec<f64> = logits.iter().map(|z| z + shift).collect();
            let q = softmax(&shifted);
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn log_softmax_is_log_of_softmax(logits in prop::collection::vec(-30.0..30.0f64, 1..8)) {
            let p = softmax(&logits);
            let lp = log_softmax(&logits);
            for (a, b) in p.iter().zip(&lp) {
                prop_assert!((a.ln() - b).abs() <= 1e-10);
            }
        }
    }
}
