//! Affine maps T(x) = Ax + b, the parameter class shared by all alignment
//! policies.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const AFFINE_FORMAT_VERSION: u32 = 1;

/// A row-major out_dim x in_dim matrix plus a bias vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub format_version: u32,
    pub out_dim: usize,
    pub in_dim: usize,
    /// Row-major matrix entries.
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl AffineTransform {
    pub fn new(out_dim: usize, in_dim: usize, a: Vec<f64>, b: Vec<f64>) -> Result<Self> {
        if a.len() != out_dim * in_dim || b.len() != out_dim {
            return Err(Error::Shape(format!(
                "affine {out_dim}x{in_dim}: got {} matrix entries, {} bias entries",
                a.len(),
                b.len()
            )));
        }
        if !a.iter().chain(&b).all(|v| v.is_finite()) {
            return Err(Error::Config("affine entries must be finite".into()));
        }
        Ok(Self {
            format_version: AFFINE_FORMAT_VERSION,
            out_dim,
            in_dim,
            a,
            b,
        })
    }

    pub fn identity(dim: usize) -> Self {
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            a[i * dim + i] = 1.0;
        }
        Self {
            format_version: AFFINE_FORMAT_VERSION,
            out_dim: dim,
            in_dim: dim,
            a,
            b: vec![0.0; dim],
        }
    }

    pub fn param_count(out_dim: usize, in_dim: usize) -> usize {
        out_dim * in_dim + out_dim
    }

    /// Flattens to [row-major A, b].
    pub fn flatten(&self) -> Vec<f64> {
        let mut v = self.a.clone();
        v.extend_from_slice(&self.b);
        v
    }

    pub fn from_flat(out_dim: usize, in_dim: usize, flat: &[f64]) -> Result<Self> {
        if flat.len() != Self::param_count(out_dim, in_dim) {
            return Err(Error::Shape(format!(
                "affine {out_dim}x{in_dim} needs {} params, got {}",
                Self::param_count(out_dim, in_dim),
                flat.len()
            )));
        }
        let (a, b) = flat.split_at(out_dim * in_dim);
        Self::new(out_dim, in_dim, a.to_vec(), b.to_vec())
    }

    /// Returns Ax + b.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::Shape(format!(
                "affine expects input dim {}, got {}",
                self.in_dim,
                x.len()
            )));
        }
        let mut out = Vec::with_capacity(self.out_dim);
        for r in 0..self.out_dim {
            let row = &self.a[r * self.in_dim..(r + 1) * self.in_dim];
            let mut acc = self.b[r];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            out.push(acc);
        }
        Ok(out)
    }

    /// self ∘ inner: (self ∘ inner)(x) = self(inner(x)).
    pub fn compose(&self, inner: &AffineTransform) -> Result<AffineTransform> {
        if self.in_dim != inner.out_dim {
            return Err(Error::Shape(format!(
                "cannot compose {}x{} with inner {}x{}",
                self.out_dim, self.in_dim, inner.out_dim, inner.in_dim
            )));
        }
        let mut a = vec![0.0; self.out_dim * inner.in_dim];
        for r in 0..self.out_dim {
            for c in 0..inner.in_dim {
                let mut acc = 0.0;
                for k in 0..self.in_dim {
                    acc += self.a[r * self.in_dim + k] * inner.a[k * inner.in_dim + c];
                }
                a[r * inner.in_dim + c] = acc;
            }
        }
        let b = self.apply(&inner.b)?;
        AffineTransform::new(self.out_dim, inner.in_dim, a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::rng::{rng_from_seed, uniform};

    #[test]
    fn identity_is_identity() {
        let t = AffineTransform::identity(3);
        let x = vec![0.4, -2.0, 7.5];
        assert_eq!(t.apply(&x).unwrap(), x);
    }

    #[test]
    fn rotation_by_90_degrees() {
        let t = AffineTransform::new(2, 2, vec![0.0, -1.0, 1.0, 0.0], vec![0.0, 0.0]).unwrap();
        let y = t.apply(&[1.0, 0.0]).unwrap();
        assert!((y[0] - 0.0).abs() < 1e-15 && (y[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_apply_matches_naive_loop() {
        let mut rng = rng_from_seed(17);
        for _ in 0..20 {
            let (m, n) = (3, 4);
            let a: Vec<f64> = (0..m * n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let b: Vec<f64> = (0..m).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let x: Vec<f64> = (0..n).map(|_| uniform(&mut rng, -2.0, 2.0)).collect();
            let t = AffineTransform::new(m, n, a.clone(), b.clone()).unwrap();
            let y = t.apply(&x).unwrap();
            for r in 0..m {
                let mut acc = b[r];
                for c in 0..n {
                    acc += a[r * n + c] * x[c];
                }
                assert!((y[r] - acc).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn flatten_roundtrip_is_identity() {
        let mut rng = rng_from_seed(29);
        let a: Vec<f64> = (0..6).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let b: Vec<f64> = (0..2).map(|_| uniform(&mut rng, -3.0, 3.0)).collect();
        let t = AffineTransform::new(2, 3, a, b).unwrap();
        let back = AffineTransform::from_flat(2, 3, &t.flatten()).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let t = AffineTransform::identity(2);
        assert!(t.apply(&[1.0, 2.0, 3.0]).is_err());
        assert!(AffineTransform::new(2, 2, vec![1.0; 3], vec![0.0; 2]).is_err());
        assert!(AffineTransform::new(2, 2, vec![f64::NAN; 4], vec![0.0; 2]).is_err());
    }

    #[test]
    fn composition_matches_sequential_application() {
        let mut rng = rng_from_seed(31);
        let t1 = AffineTransform::new(
            2,
            2,
            (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
            (0..2).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let t2 = AffineTransform::new(
            2,
            2,
            (0..4).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
            (0..2).map(|_| uniform(&mut rng, -1.0, 1.0)).collect(),
        )
        .unwrap();
        let composed = t1.compose(&t2).unwrap();
        let x = vec![0.7, -0.3];
        let seq = t1.apply(&t2.apply(&x).unwrap()).unwrap();
        let once = composed.apply(&x).unwrap();
        for (s, o) in seq.iter().zip(&once) {
            assert!((s - o).abs() <= 1e-12);
        }
    }
}
