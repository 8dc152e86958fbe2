//! Dense symmetric positive-definite helpers for the Gaussian oracles.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1};

use crate::error::{Error, Result};

/// Lower-triangular Cholesky factor `L` with `L Lᵀ = A`.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky {
    lower: Array2<f64>,
}

impl Cholesky {
    pub fn new(a: &Array2<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::InvalidArgument(format!(
                "matrix is {}x{}, not square",
                n,
                a.ncols()
            )));
        }
        let mut l = Array2::<f64>::zeros((n, n));
        for j in 0..n {
            let mut d = a[[j, j]];
            for k in 0..j {
                d -= l[[j, k]] * l[[j, k]];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(Error::Numeric(format!("matrix not positive definite at pivot {j}")));
            }
            let d = d.sqrt();
            l[[j, j]] = d;
            for i in (j + 1)..n {
                let mut s = a[[i, j]];
                for k in 0..j {
                    s -= l[[i, k]] * l[[j, k]];
                }
                l[[i, j]] = s / d;
            }
        }
        Ok(Cholesky { lower: l })
    }

    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &Array2<f64> {
        &self.lower
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diag().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `L y = b`.
    pub fn forward_solve(&self, b: ArrayView1<f64>) -> Array1<f64> {
        let n = self.dim();
        let mut y = Array1::zeros(n);
        for i in 0..n {
            let mut s = b[i];
            for k in 0..i {
                s -= self.lower[[i, k]] * y[k];
            }
            y[i] = s / self.lower[[i, i]];
        }
        y
    }

    /// `xᵀ A⁻¹ x`.
    pub fn mahalanobis_sq(&self, x: ArrayView1<f64>) -> f64 {
        self.forward_solve(x).iter().map(|v| v * v).sum()
    }

    /// `ln N(x; mean, A)`.
    pub fn log_density(&self, x: ArrayView1<f64>, mean: ArrayView1<f64>) -> f64 {
        let centered = &x - &mean;
        let n = self.dim() as f64;
        -0.5 * (self.mahalanobis_sq(centered.view()) + self.log_det() + n * (2.0 * PI).ln())
    }
}
