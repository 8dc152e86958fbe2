//! Accuracy and calibration measures for `ln K` estimates.
//!
//! The blind coverage test converts each estimate to `p(M₁|x)`, bins the
//! probabilities, and compares the fraction of label-1 samples in each bin
//! with the mean predicted probability, in units of the binomial standard
//! error `√(p̄(1 − p̄)/n)`. A calibrated estimator gives rescaled residuals with
//! zero mean and unit spread. No true evidences are needed.

use std::io::Write;

use ndarray::{Array1, Array2, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::losses::{decode_posterior, decode_raw, LossSpec, ModelPriorRatio};
use crate::nn::Network;
use crate::training::{csv_error, train, TrainConfig};

/// `√(mean((predicted − truth)²))`.
pub fn rmse_log_k(predicted: ArrayView1<f64>, truth: ArrayView1<f64>) -> Result<f64> {
    if predicted.len() != truth.len() || predicted.is_empty() {
        return Err(invalid(format!(
            "rmse needs equal non-empty lengths, got {} and {}",
            predicted.len(),
            truth.len()
        )));
    }
    let ss: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((ss / predicted.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageThresholds {
    pub max_abs_mean: f64,
    pub min_std: f64,
    pub max_std: f64,
}

impl Default for CoverageThresholds {
    fn default() -> Self {
        CoverageThresholds {
            max_abs_mean: 0.1,
            min_std: 0.8,
            max_std: 1.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageBin {
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub n: usize,
    pub p_mean: f64,
    pub fraction: f64,
    pub sigma_err: f64,
    pub residual: f64,
    /// Whether the bin enters the summary.
    pub included: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub bins: Vec<CoverageBin>,
    pub min_count: usize,
    pub thresholds: CoverageThresholds,
    pub residual_mean: f64,
    /// Sample standard deviation of the included residuals; `None` with fewer
    /// than two included bins.
    pub residual_std: Option<f64>,
    pub excluded_bins: Vec<usize>,
    pub included_samples: usize,
}

impl CoverageReport {
    pub fn passed(&self) -> bool {
        let t = &self.thresholds;
        match self.residual_std {
            Some(sd) => self.residual_mean.abs() <= t.max_abs_mean && sd >= t.min_std && sd <= t.max_std,
            None => false,
        }
    }

    /// One row per bin: `bin_lo,bin_hi,n,p_mean,fraction,sigma_err,residual`.
    /// Excluded bins keep their statistics; empty bins have empty cells.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "bin_lo",
            "bin_hi",
            "n",
            "p_mean",
            "fraction",
            "sigma_err",
            "residual",
            "included",
        ])
        .map_err(csv_error)?;
        for b in &self.bins {
            let cell = |v: f64| {
                if b.n == 0 || !v.is_finite() {
                    String::new()
                } else {
                    v.to_string()
                }
            };
            out.write_record([
                b.bin_lo.to_string(),
                b.bin_hi.to_string(),
                b.n.to_string(),
                cell(b.p_mean),
                cell(b.fraction),
                cell(b.sigma_err),
                cell(b.residual),
                b.included.to_string(),
            ])
            .map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Blind coverage test on `n_bins` equal-width probability bins.
pub fn coverage_test(
    log_k: ArrayView1<f64>,
    labels: &[u8],
    n_bins: usize,
    min_count: usize,
    prior: ModelPriorRatio,
) -> Result<CoverageReport> {
    if log_k.len() != labels.len() {
        return Err(invalid(format!(
            "{} estimates but {} labels",
            log_k.len(),
            labels.len()
        )));
    }
    if n_bins < 2 {
        return Err(invalid(format!("coverage test needs >= 2 bins, got {n_bins}")));
    }
    if labels.iter().any(|&m| m > 1) {
        return Err(invalid("labels must be 0 or 1"));
    }
    let mut sum_p = vec![0.0; n_bins];
    let mut ones = vec![0usize; n_bins];
    let mut count = vec![0usize; n_bins];
    for (&lk, &m) in log_k.iter().zip(labels) {
        if lk.is_nan() {
            return Err(Error::Numeric("NaN log K estimate".into()));
        }
        let p = decode_posterior(lk, prior);
        let b = ((p * n_bins as f64) as usize).min(n_bins - 1);
        sum_p[b] += p;
        ones[b] += m as usize;
        count[b] += 1;
    }
    let mut bins = Vec::with_capacity(n_bins);
    let mut excluded = Vec::new();
    let mut residuals = Vec::new();
    let mut included_samples = 0;
    for b in 0..n_bins {
        let n = count[b];
        let (p_mean, fraction) = if n > 0 {
            (sum_p[b] / n as f64, ones[b] as f64 / n as f64)
        } else {
            (f64::NAN, f64::NAN)
        };
        let sigma_err = (p_mean * (1.0 - p_mean) / n as f64).sqrt();
        let residual = (fraction - p_mean) / sigma_err;
        let included = n >= min_count && n > 0 && sigma_err > 0.0;
        if included {
            residuals.push(residual);
            included_samples += n;
        } else {
            excluded.push(b);
        }
        bins.push(CoverageBin {
            bin_lo: b as f64 / n_bins as f64,
            bin_hi: (b + 1) as f64 / n_bins as f64,
            n,
            p_mean,
            fraction,
            sigma_err,
            residual,
            included,
        });
    }
    if residuals.is_empty() {
        let needed = min_count * 2;
        return Err(invalid(format!(
            "no bin reaches {min_count} samples; the validation set is too small (use at least ~{} samples)",
            needed * n_bins
        )));
    }
    let k = residuals.len() as f64;
    let residual_mean = residuals.iter().sum::<f64>() / k;
    let residual_std = (residuals.len() > 1)
        .then(|| (residuals.iter().map(|r| (r - residual_mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt());
    Ok(CoverageReport {
        bins,
        min_count,
        thresholds: CoverageThresholds::default(),
        residual_mean,
        residual_std,
        excluded_bins: excluded,
        included_samples,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimateSource {
    Ensemble,
    Oracle,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BayesFactorEstimate {
    pub log_k: f64,
    pub stderr: f64,
    pub source: EstimateSource,
    /// Set when `log_k` is infinite.
    pub saturated: bool,
}

impl BayesFactorEstimate {
    pub fn new(log_k: f64, stderr: f64, source: EstimateSource) -> Result<Self> {
        if log_k.is_nan() || !(stderr >= 0.0) {
            return Err(Error::Numeric(format!("invalid estimate {log_k} ± {stderr}")));
        }
        Ok(BayesFactorEstimate {
            log_k,
            stderr,
            source,
            saturated: log_k.is_infinite(),
        })
    }

    pub fn log10_k(&self) -> f64 {
        self.log_k / std::f64::consts::LN_10
    }
}

/// `ln p(x|M₁) = ln K + ln p(x|M₀)` for a reference model with known evidence.
pub fn absolute_log_evidence(log_k: f64, log_z_reference: f64) -> f64 {
    log_k + log_z_reference
}

/// Posterior-predictive log ratio `ln K(x) − ln K(x₀)` of held-out data given
/// the subset `x₀`. An empty subset has `ln K(x₀) = 0`.
pub fn ppt_log_k(log_k_full: f64, log_k_subset: f64) -> f64 {
    log_k_full - log_k_subset
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossComparisonRow {
    pub loss: String,
    pub alpha: f64,
    pub rmse: f64,
    pub stratum_rmse: f64,
    pub stratum_n: usize,
}

/// |ln K| above which samples enter the high-evidence stratum.
pub const STRATUM_THRESHOLD: f64 = 5.0;

/// Trains one network per loss on the same data and seed, then scores each on
/// `test` against `truth`, overall and on `|ln K_true| > 5`.
pub fn loss_comparison_report(
    specs: &[LossSpec],
    train_set: &Dataset,
    config: &TrainConfig,
    test: &Dataset,
    truth: ArrayView1<f64>,
) -> Result<Vec<LossComparisonRow>> {
    if test.len() != truth.len() {
        return Err(invalid("test set and truth lengths differ"));
    }
    let prior = train_set.prior_ratio(None)?;
    let stratum: Vec<usize> = (0..truth.len())
        .filter(|&i| truth[i].abs() > STRATUM_THRESHOLD)
        .collect();
    specs
        .par_iter()
        .map(|spec| {
            let net = Network::new(train_set.dim(), config.seed)?;
            let (net, _) = train(net, train_set, spec, config)?;
            let pred: Array1<f64> = net.predict(test.data())?.mapv(|f| decode_raw(spec, f, prior));
            let rmse = rmse_log_k(pred.view(), truth)?;
            let stratum_rmse = if stratum.is_empty() {
                f64::NAN
            } else {
                let p = pred.select(ndarray::Axis(0), &stratum);
                let t = truth.select(ndarray::Axis(0), &stratum);
                rmse_log_k(p.view(), t.view())?
            };
            Ok(LossComparisonRow {
                loss: spec.kind().name().to_string(),
                alpha: spec.alpha(),
                rmse,
                stratum_rmse,
                stratum_n: stratum.len(),
            })
        })
        .collect()
}

/// `g × g` points on `[−h, h]²`, first coordinate varying slowest.
pub fn square_grid(g: usize, h: f64) -> Array2<f64> {
    let axis: Vec<f64> = (0..g).map(|i| -h + 2.0 * h * i as f64 / (g - 1) as f64).collect();
    Array2::from_shape_fn((g * g, 2), |(r, c)| if c == 0 { axis[r / g] } else { axis[r % g] })
}

pub fn write_loss_comparison_csv(rows: &[LossComparisonRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r).map_err(csv_error)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use rand::Rng as _;

    #[test]
    fn rmse_examples() {
        let t = array![1.0, -2.0, 3.5];
        assert_eq!(rmse_log_k(t.view(), t.view()).unwrap(), 0.0);
        let p = &t + 0.1;
        assert!((rmse_log_k(p.view(), t.view()).unwrap() - 0.1).abs() < 1e-15);
        assert!(rmse_log_k(t.view(), array![1.0].view()).is_err());
        assert!(rmse_log_k(array![].view(), array![].view()).is_err());
    }

    #[test]
    fn constant_half_estimator() {
        let mut r = rng::stream(4, 0);
        let labels: Vec<u8> = (0..10_000).map(|_| r.random_bool(0.5) as u8).collect();
        let est = Array1::zeros(10_000);
        let rep = coverage_test(est.view(), &labels, 10, 20, ModelPriorRatio::EQUAL).unwrap();
        let occupied: Vec<&CoverageBin> = rep.bins.iter().filter(|b| b.n > 0).collect();
        assert_eq!(occupied.len(), 1);
        assert!(occupied[0].residual.abs() <= 3.0);
        assert_eq!(rep.residual_std, None);
        assert!(!rep.passed());
        assert_eq!(rep.excluded_bins.len(), 9);
    }

    #[test]
    fn bin_bookkeeping() {
        let est = array![-3.0, -1.0, 0.0, 0.2, 2.0, 9.0, -9.0, 1.0];
        let labels = [0, 0, 1, 1, 1, 1, 0, 0];
        let rep = coverage_test(est.view(), &labels, 4, 2, ModelPriorRatio::EQUAL).unwrap();
        assert_eq!(rep.bins.len(), 4);
        assert_eq!(rep.bins.iter().map(|b| b.n).sum::<usize>(), 8);
        let included: usize = rep.bins.iter().filter(|b| b.included).map(|b| b.n).sum();
        assert_eq!(included, rep.included_samples);
        for b in rep.bins.iter().filter(|b| b.included) {
            assert!((b.sigma_err - (b.p_mean * (1.0 - b.p_mean) / b.n as f64).sqrt()).abs() < 1e-15);
        }
        assert!(coverage_test(est.view(), &labels, 4, 100, ModelPriorRatio::EQUAL).is_err());
        assert!(coverage_test(est.view(), &labels, 1, 1, ModelPriorRatio::EQUAL).is_err());
    }

    #[test]
    fn calibrated_synthetic_passes_often_and_corruption_fails() {
        // Labels drawn from the stated probabilities are calibrated by construction.
        let mut r = rng::stream(9, 0);
        let n = 100_000;
        let lk: Array1<f64> = Array1::from_shape_simple_fn(n, || r.random_range(-4.0..4.0));
        let labels: Vec<u8> = lk
            .iter()
            .map(|&v| r.random_bool(decode_posterior(v, ModelPriorRatio::EQUAL)) as u8)
            .collect();
        let rep = coverage_test(lk.view(), &labels, 10, 20, ModelPriorRatio::EQUAL).unwrap();
        let k = 10.0f64;
        // mean of k unit normals, and a χ²-based bound on their spread
        assert!(rep.residual_mean.abs() < 4.0 / k.sqrt(), "{rep:?}");
        let sd = rep.residual_std.unwrap();
        assert!(sd > 0.2 && sd < 2.0, "{sd}");
        let doubled = lk.mapv(|v| 2.0 * v);
        let bad = coverage_test(doubled.view(), &labels, 10, 20, ModelPriorRatio::EQUAL).unwrap();
        assert!(bad.residual_std.unwrap() > 2.0);
        assert!(!bad.passed());
    }

    #[test]
    fn csv_has_one_row_per_bin() {
        let est = array![-1.0, 1.0, 0.5, -0.5];
        let rep = coverage_test(est.view(), &[0, 1, 1, 0], 5, 1, ModelPriorRatio::EQUAL).unwrap();
        let mut buf = Vec::new();
        rep.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert!(text.starts_with("bin_lo,bin_hi,n,p_mean,fraction,sigma_err,residual"));
    }

    #[test]
    fn grid_layout() {
        let g = square_grid(41, 2.0);
        assert_eq!(g.nrows(), 1681);
        assert_eq!(g.row(0).to_vec(), vec![-2.0, -2.0]);
        assert_eq!(g.row(1).to_vec(), vec![-2.0, -1.9]);
        assert_eq!(g.row(1680).to_vec(), vec![2.0, 2.0]);
        assert_eq!(g.row(840).to_vec(), vec![0.0, 0.0]);
    }

    #[test]
    fn derived_quantities() {
        assert_eq!(absolute_log_evidence(2.0, -10.0), -8.0);
        assert_eq!(absolute_log_evidence(0.0, 3.5), 3.5);
        assert_eq!(ppt_log_k(3.0, 1.0), 2.0);
        assert_eq!(ppt_log_k(1.7, 0.0), 1.7);
        let e = BayesFactorEstimate::new(f64::INFINITY, 0.0, EstimateSource::Oracle).unwrap();
        assert!(e.saturated);
        assert!(BayesFactorEstimate::new(f64::NAN, 0.0, EstimateSource::Oracle).is_err());
        assert!(
            (BayesFactorEstimate::new(std::f64::consts::LN_10, 0.0, EstimateSource::Ensemble)
                .unwrap()
                .log10_k()
                - 1.0)
                .abs()
                < 1e-15
        );
    }
}
