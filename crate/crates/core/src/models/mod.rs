//! Generative model pairs with exact evidence oracles.
//!
//! Two families are provided. The nested linear-Gaussian time series
//! ([`timeseries`]) has closed-form evidences. The Rastrigin/Gaussian prior
//! pair ([`rastrigin`]) factorizes per dimension, so its Bayes factor is a sum of
//! one-dimensional integrals evaluated by adaptive quadrature. [`gaussian`]
//! holds a Gaussian maximum-likelihood density-ratio baseline.

pub mod gaussian;
pub mod linalg;
pub mod quadrature;
pub mod rastrigin;
pub mod timeseries;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::rng::Rng;
use rastrigin::{RastriginModelSpec, RastriginOracle, RastriginVariant};
use timeseries::{TimeSeriesModelSpec, TimeSeriesOracle, TimeSeriesVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvidenceMethod {
    ClosedForm,
    MonteCarlo,
    Quadrature,
    GaussianMle,
}

impl EvidenceMethod {
    pub fn is_exact(self) -> bool {
        matches!(self, EvidenceMethod::ClosedForm | EvidenceMethod::Quadrature)
    }

    pub fn name(self) -> &'static str {
        match self {
            EvidenceMethod::ClosedForm => "closed-form",
            EvidenceMethod::MonteCarlo => "monte-carlo",
            EvidenceMethod::Quadrature => "quadrature",
            EvidenceMethod::GaussianMle => "gaussian-mle",
        }
    }
}

/// A log evidence (or log Bayes factor) with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceValue {
    pub log_evidence: f64,
    pub stderr: f64,
    pub method: EvidenceMethod,
}

impl EvidenceValue {
    pub fn exact(log_evidence: f64, method: EvidenceMethod) -> Self {
        EvidenceValue {
            log_evidence,
            stderr: 0.0,
            method,
        }
    }
}

/// `ln mean(exp(v))` and the relative standard deviation `sd(w)/mean(w)` of
/// the weights `w = exp(v)`. `None` when every entry is `−∞`.
pub(crate) fn log_mean_exp(values: &[f64]) -> Option<(f64, f64)> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() || values.len() < 2 {
        return None;
    }
    let n = values.len() as f64;
    let scaled: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let mean = scaled.iter().sum::<f64>() / n;
    let var = scaled.iter().map(|w| (w - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Some((max + mean.ln(), var.sqrt() / mean))
}

/// A pair of competing models: label 1 is the first model, label 0 the second.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelPair {
    /// `M₁` (with growth term) against `M₀` on a shared time grid.
    TimeSeries(TimeSeriesModelSpec),
    /// Rastrigin prior against the Gaussian prior, `x = θ + n`.
    Rastrigin { n: usize, noise_var: f64 },
}

impl ModelPair {
    pub fn time_series(n: usize) -> Result<Self> {
        Ok(ModelPair::TimeSeries(TimeSeriesModelSpec::new(
            n,
            TimeSeriesVariant::M1,
        )?))
    }

    pub fn rastrigin(n: usize, noise_var: f64) -> Result<Self> {
        RastriginModelSpec::new(n, noise_var, RastriginVariant::Rastrigin)?;
        Ok(ModelPair::Rastrigin { n, noise_var })
    }

    pub fn dim(&self) -> usize {
        match self {
            ModelPair::TimeSeries(s) => s.n(),
            ModelPair::Rastrigin { n, .. } => *n,
        }
    }

    /// Draws `count` rows from model `label`.
    pub fn sample(&self, label: u8, rng: &mut Rng, count: usize) -> Result<Array2<f64>> {
        match (self, label) {
            (ModelPair::TimeSeries(s), 1) => Ok(s.with_variant(TimeSeriesVariant::M1).sample_with(rng, count)),
            (ModelPair::TimeSeries(s), 0) => Ok(s.with_variant(TimeSeriesVariant::M0).sample_with(rng, count)),
            (ModelPair::Rastrigin { n, noise_var }, 0 | 1) => {
                let variant = if label == 1 {
                    RastriginVariant::Rastrigin
                } else {
                    RastriginVariant::Gaussian
                };
                Ok(RastriginModelSpec::new(*n, *noise_var, variant)?.sample_with(rng, count))
            }
            _ => Err(invalid(format!("model label must be 0 or 1, got {label}"))),
        }
    }

    pub fn oracle(&self) -> Result<TruthOracle> {
        Ok(match self {
            ModelPair::TimeSeries(s) => TruthOracle::TimeSeries(TimeSeriesOracle::new(s)?),
            ModelPair::Rastrigin { n, noise_var } => TruthOracle::Rastrigin {
                dim: *n,
                oracle: RastriginOracle::new(*noise_var)?,
            },
        })
    }
}

/// Exact `ln K` for a [`ModelPair`].
#[derive(Debug, Clone)]
pub enum TruthOracle {
    TimeSeries(TimeSeriesOracle),
    Rastrigin { dim: usize, oracle: RastriginOracle },
}

impl TruthOracle {
    pub fn method(&self) -> EvidenceMethod {
        match self {
            TruthOracle::TimeSeries(_) => EvidenceMethod::ClosedForm,
            TruthOracle::Rastrigin { .. } => EvidenceMethod::Quadrature,
        }
    }

    pub fn log_k(&self, x: ArrayView1<f64>) -> Result<f64> {
        match self {
            TruthOracle::TimeSeries(o) => o.log_k(x),
            TruthOracle::Rastrigin { dim, oracle } => {
                if x.len() != *dim {
                    return Err(invalid(format!("data length {} does not match n = {dim}", x.len())));
                }
                oracle.log_k(x)
            }
        }
    }

    /// `ln K` for every row, evaluated in parallel.
    pub fn log_k_rows(&self, rows: ArrayView2<f64>) -> Result<Array1<f64>> {
        let values = (0..rows.nrows())
            .into_par_iter()
            .map(|i| self.log_k(rows.row(i)))
            .collect::<Result<Vec<f64>>>()?;
        Ok(Array1::from(values))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::Axis;

    #[test]
    fn log_mean_exp_matches_direct() {
        let v = [-1.0, 0.5, 2.0, -3.0];
        let (lm, rel) = log_mean_exp(&v).unwrap();
        let w: Vec<f64> = v.iter().map(|x: &f64| x.exp()).collect();
        let mean = w.iter().sum::<f64>() / 4.0;
        let sd = (w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
        assert!((lm - mean.ln()).abs() < 1e-14);
        assert!((rel - sd / mean).abs() < 1e-13);
        assert!(log_mean_exp(&[f64::NEG_INFINITY; 3]).is_none());
    }

    #[test]
    fn exactness_flag() {
        assert!(EvidenceMethod::ClosedForm.is_exact());
        assert!(EvidenceMethod::Quadrature.is_exact());
        assert!(!EvidenceMethod::MonteCarlo.is_exact());
        assert!(!EvidenceMethod::GaussianMle.is_exact());
    }

    #[test]
    fn pair_sampling_shapes_and_labels() {
        let pair = ModelPair::rastrigin(2, 1.0 / 16.0).unwrap();
        let mut r = rng::stream(1, 0);
        assert_eq!(pair.sample(1, &mut r, 5).unwrap().dim(), (5, 2));
        assert!(pair.sample(2, &mut r, 5).is_err());
        let ts = ModelPair::time_series(4).unwrap();
        assert_eq!(ts.sample(0, &mut r, 3).unwrap().dim(), (3, 4));
        assert!(ModelPair::rastrigin(2, 0.0).is_err());
    }

    #[test]
    fn oracle_rows_match_single_calls() {
        let pair = ModelPair::time_series(5).unwrap();
        let o = pair.oracle().unwrap();
        let x = pair.sample(1, &mut rng::stream(2, 0), 6).unwrap();
        let rows = o.log_k_rows(x.view()).unwrap();
        for (i, row) in x.axis_iter(Axis(0)).enumerate() {
            assert_eq!(rows[i], o.log_k(row).unwrap());
        }
        assert!(o.log_k(Array1::zeros(3).view()).is_err());
    }
}
