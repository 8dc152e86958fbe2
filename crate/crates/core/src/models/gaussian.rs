//! Gaussian maximum-likelihood density-ratio baseline.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::linalg::Cholesky;
use crate::error::{invalid, Error, Result};

/// Sample mean and unbiased covariance of a set of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Array1<f64>,
    pub covariance: Array2<f64>,
    /// Diagonal jitter added to make the covariance factorizable (0 if none).
    pub jitter: f64,
    factor: Cholesky,
}

pub fn fit_gaussian_mle(samples: ArrayView2<f64>) -> Result<GaussianFit> {
    let (n, dim) = samples.dim();
    if dim == 0 || n <= dim + 1 {
        return Err(invalid(format!(
            "need more than dim + 1 = {} samples, got {n}",
            dim + 1
        )));
    }
    let mean = samples.mean_axis(Axis(0)).expect("n > 0");
    let centered = &samples - &mean;
    let covariance = centered.t().dot(&centered) / (n as f64 - 1.0);
    let trace = covariance.diag().sum();
    let base = if trace > 0.0 { 1e-9 * trace / dim as f64 } else { 1e-9 };
    let mut jitter = 0.0;
    for _ in 0..12 {
        let mut c = covariance.clone();
        c.diag_mut().mapv_inplace(|v| v + jitter);
        if let Ok(factor) = Cholesky::new(&c) {
            return Ok(GaussianFit {
                mean,
                covariance,
                jitter,
                factor,
            });
        }
        jitter = if jitter == 0.0 { base } else { jitter * 10.0 };
    }
    Err(Error::Numeric("covariance could not be regularized".into()))
}

impl GaussianFit {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn log_density(&self, x: ArrayView1<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(invalid(format!(
                "data length {} does not match fit dimension {}",
                x.len(),
                self.dim()
            )));
        }
        Ok(self.factor.log_density(x, self.mean.view()))
    }
}

/// `ln N(x; fit₁) − ln N(x; fit₀)`.
pub fn baseline_log_k(fit1: &GaussianFit, fit0: &GaussianFit, x: ArrayView1<f64>) -> Result<f64> {
    Ok(fit1.log_density(x)? - fit0.log_density(x)?)
}
