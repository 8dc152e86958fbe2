//! Nested linear-Gaussian time-series models.
//!
//! Data are `x = A θ + n` with `θ ~ N(0, I)` and heteroscedastic diagonal noise
//! `n ~ N(0, Σ)`, `√Σ_kk = √(N/100) · ((k + 5/2) · 8/5)²`. Column 0 of `A` is the
//! linear growth term `2 t_j`; columns `i ≥ 1` are `cos((i − ½) t_j)`. The
//! sub-model `M₀` drops the growth column.
//!
//! Both evidences are Gaussian: `p(x|M) = N(x; 0, Σ + A Aᵀ)`.

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::linalg::Cholesky;
use super::{log_mean_exp, EvidenceMethod, EvidenceValue};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

/// Default spacing of the time grid, `t_j = 3 j`.
pub const DEFAULT_T_STEP: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TimeSeriesVariant {
    /// With the growth column.
    M1,
    /// Growth column removed (`θ₀ = 0`).
    M0,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesModelSpec {
    t: Vec<f64>,
    variant: TimeSeriesVariant,
}

impl TimeSeriesModelSpec {
    /// `n` points on the default grid `t_j = 3 j`.
    pub fn new(n: usize, variant: TimeSeriesVariant) -> Result<Self> {
        Self::with_step(n, DEFAULT_T_STEP, variant)
    }

    pub fn with_step(n: usize, step: f64, variant: TimeSeriesVariant) -> Result<Self> {
        if !(step > 0.0 && step.is_finite()) {
            return Err(invalid(format!("time step must be positive, got {step}")));
        }
        Self::with_grid((0..n).map(|j| step * j as f64).collect(), variant)
    }

    pub fn with_grid(t: Vec<f64>, variant: TimeSeriesVariant) -> Result<Self> {
        if t.len() < 2 {
            return Err(invalid(format!("time-series models need N >= 2, got {}", t.len())));
        }
        if t.windows(2).any(|w| !(w[1] > w[0])) || t.iter().any(|v| !v.is_finite()) {
            return Err(invalid("time grid must be finite and strictly increasing"));
        }
        Ok(TimeSeriesModelSpec { t, variant })
    }

    pub fn n(&self) -> usize {
        self.t.len()
    }

    pub fn t(&self) -> &[f64] {
        &self.t
    }

    pub fn variant(&self) -> TimeSeriesVariant {
        self.variant
    }

    pub fn with_variant(&self, variant: TimeSeriesVariant) -> Self {
        TimeSeriesModelSpec {
            t: self.t.clone(),
            variant,
        }
    }

    /// Number of parameters: `N` for `M₁`, `N − 1` for `M₀`.
    pub fn n_params(&self) -> usize {
        match self.variant {
            TimeSeriesVariant::M1 => self.n(),
            TimeSeriesVariant::M0 => self.n() - 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix(pub Array2<f64>);

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance(pub Array1<f64>);

pub fn build_design_matrix(spec: &TimeSeriesModelSpec) -> DesignMatrix {
    let n = spec.n();
    let full = Array2::from_shape_fn((n, n), |(j, i)| {
        let t = spec.t[j];
        if i == 0 {
            2.0 * t
        } else {
            ((i as f64 - 0.5) * t).cos()
        }
    });
    match spec.variant {
        TimeSeriesVariant::M1 => DesignMatrix(full),
        TimeSeriesVariant::M0 => DesignMatrix(full.slice(ndarray::s![.., 1..]).to_owned()),
    }
}

/// Diagonal of `Σ`.
pub fn noise_covariance(n: usize) -> NoiseCovariance {
    let scale = (n as f64 / 100.0).sqrt();
    NoiseCovariance(Array1::from_shape_fn(n, |k| {
        let sd = scale * ((k as f64 + 2.5) * 1.6).powi(2);
        sd * sd
    }))
}

impl TimeSeriesModelSpec {
    fn marginal_covariance(&self) -> Array2<f64> {
        let a = build_design_matrix(self).0;
        let mut c = a.dot(&a.t());
        for (k, s) in noise_covariance(self.n()).0.iter().enumerate() {
            c[[k, k]] += s;
        }
        c
    }

    pub fn sample_with(&self, rng: &mut Rng, count: usize) -> Array2<f64> {
        let a = build_design_matrix(self).0;
        let noise_sd = noise_covariance(self.n()).0.mapv(f64::sqrt);
        let (n, p) = (self.n(), self.n_params());
        let mut out = Array2::zeros((count, n));
        let mut theta = Array1::<f64>::zeros(p);
        for mut row in out.axis_iter_mut(Axis(0)) {
            theta.mapv_inplace(|_| rng.sample(StandardNormal));
            let signal = a.dot(&theta);
            for k in 0..n {
                let z: f64 = rng.sample(StandardNormal);
                row[k] = signal[k] + noise_sd[k] * z;
            }
        }
        out
    }
}

/// `count` rows of `x = Aθ + n`; the parameters are discarded.
pub fn sample_time_series(spec: &TimeSeriesModelSpec, seed: u64, count: usize) -> Array2<f64> {
    spec.sample_with(&mut rng::stream(seed, 0), count)
}

/// Closed-form evidence for both models of a grid, with factorizations cached.
#[derive(Debug, Clone)]
pub struct TimeSeriesOracle {
    m1: Cholesky,
    m0: Cholesky,
}

impl TimeSeriesOracle {
    pub fn new(spec: &TimeSeriesModelSpec) -> Result<Self> {
        Ok(TimeSeriesOracle {
            m1: Cholesky::new(&spec.with_variant(TimeSeriesVariant::M1).marginal_covariance())?,
            m0: Cholesky::new(&spec.with_variant(TimeSeriesVariant::M0).marginal_covariance())?,
        })
    }

    fn factor(&self, variant: TimeSeriesVariant) -> &Cholesky {
        match variant {
            TimeSeriesVariant::M1 => &self.m1,
            TimeSeriesVariant::M0 => &self.m0,
        }
    }

    pub fn log_evidence(&self, variant: TimeSeriesVariant, x: ArrayView1<f64>) -> Result<f64> {
        let c = self.factor(variant);
        if x.len() != c.dim() {
            return Err(invalid(format!(
                "data length {} does not match N = {}",
                x.len(),
                c.dim()
            )));
        }
        Ok(c.log_density(x, Array1::zeros(c.dim()).view()))
    }

    /// `ln Z(x|M₁) − ln Z(x|M₀)`.
    pub fn log_k(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.log_evidence(TimeSeriesVariant::M1, x)? - self.log_evidence(TimeSeriesVariant::M0, x)?)
    }
}

/// `ln N(x; 0, Σ + AAᵀ)`.
pub fn analytic_log_evidence(spec: &TimeSeriesModelSpec, x: ArrayView1<f64>) -> Result<EvidenceValue> {
    if x.len() != spec.n() {
        return Err(invalid(format!(
            "data length {} does not match N = {}",
            x.len(),
            spec.n()
        )));
    }
    let c = Cholesky::new(&spec.marginal_covariance())?;
    Ok(EvidenceValue::exact(
        c.log_density(x, Array1::zeros(spec.n()).view()),
        EvidenceMethod::ClosedForm,
    ))
}

/// `ln K` of `M₁` against `M₀` on the grid of `spec`.
pub fn analytic_log_k(spec: &TimeSeriesModelSpec, x: ArrayView1<f64>) -> Result<f64> {
    TimeSeriesOracle::new(spec)?.log_k(x)
}

/// Brute-force `ln ∫ N(x; Aθ, Σ) N(θ; 0, I) dθ` from `n_draws` prior draws.
pub fn mc_log_evidence(
    spec: &TimeSeriesModelSpec,
    x: ArrayView1<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<EvidenceValue> {
    mc_log_evidence_with(
        &build_design_matrix(spec).0,
        &noise_covariance(spec.n()).0,
        x,
        n_draws,
        seed,
    )
}

/// Same as [`mc_log_evidence`] for an explicit design matrix.
pub fn mc_log_evidence_with(
    design: &Array2<f64>,
    noise_var: &Array1<f64>,
    x: ArrayView1<f64>,
    n_draws: usize,
    seed: u64,
) -> Result<EvidenceValue> {
    if n_draws < 1000 {
        return Err(invalid(format!(
            "Monte Carlo evidence needs >= 1000 draws, got {n_draws}"
        )));
    }
    let (n, p) = design.dim();
    if x.len() != n || noise_var.len() != n {
        return Err(invalid("data, design matrix and noise dimensions disagree"));
    }
    let mut rng = rng::stream(seed, rng::STREAM_MC);
    let inv_var = noise_var.mapv(|v| 1.0 / v);
    let norm = -0.5
        * noise_var
            .iter()
            .map(|v| (2.0 * std::f64::consts::PI * v).ln())
            .sum::<f64>();
    let mut theta = vec![0.0; p];
    let log_like: Vec<f64> = (0..n_draws)
        .map(|_| {
            for t in theta.iter_mut() {
                *t = rng.sample(StandardNormal);
            }
            let mut q = 0.0;
            for k in 0..n {
                let row = design.row(k);
                let mut mu = 0.0;
                for i in 0..p {
                    mu += row[i] * theta[i];
                }
                let r = x[k] - mu;
                q += r * r * inv_var[k];
            }
            norm - 0.5 * q
        })
        .collect();
    let (log_mean, rel_sd) = log_mean_exp(&log_like)
        .ok_or_else(|| Error::Numeric("all likelihood weights underflowed; use more draws or a smaller N".into()))?;
    // Delta method: sd(ln ŵ) ≈ sd(w) / (√n · mean(w)).
    Ok(EvidenceValue {
        log_evidence: log_mean,
        stderr: rel_sd / (n_draws as f64).sqrt(),
        method: EvidenceMethod::MonteCarlo,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn unit_grid(n: usize, v: TimeSeriesVariant) -> TimeSeriesModelSpec {
        TimeSeriesModelSpec::with_grid((0..n).map(|j| j as f64 / (n - 1) as f64).collect(), v).unwrap()
    }

    #[test]
    fn design_matrix_on_unit_grid() {
        let a = build_design_matrix(&unit_grid(2, TimeSeriesVariant::M1)).0;
        let expect = array![[0.0, 1.0], [2.0, 0.5f64.cos()]];
        assert_eq!(a, expect);
        assert!((a[[1, 1]] - 0.877583).abs() < 1e-6);
        let a0 = build_design_matrix(&unit_grid(2, TimeSeriesVariant::M0)).0;
        assert_eq!(a0, array![[1.0], [0.5f64.cos()]]);
    }

    #[test]
    fn cosine_entries_bounded() {
        let spec = TimeSeriesModelSpec::new(30, TimeSeriesVariant::M1).unwrap();
        let a = build_design_matrix(&spec).0;
        assert!(a.slice(ndarray::s![.., 1..]).iter().all(|v| v.abs() <= 1.0));
        for (j, t) in spec.t().iter().enumerate() {
            assert_eq!(a[[j, 0]], 2.0 * t);
        }
    }

    #[test]
    fn noise_covariance_values() {
        let s = noise_covariance(100).0;
        assert!((s[0] - 256.0).abs() < 1e-9);
        assert!((s[1] - 983.4496).abs() < 1e-9);
        assert!((noise_covariance(25).0[0] - 64.0).abs() < 1e-12);
        assert!(s.iter().all(|&v| v > 0.0));
    }

    #[test]
    fn spec_validation() {
        assert!(TimeSeriesModelSpec::new(1, TimeSeriesVariant::M1).is_err());
        assert!(TimeSeriesModelSpec::with_grid(vec![0.0, 0.0], TimeSeriesVariant::M1).is_err());
        assert!(TimeSeriesModelSpec::with_step(3, -1.0, TimeSeriesVariant::M1).is_err());
    }

    #[test]
    fn zero_data_evidence() {
        let spec = TimeSeriesModelSpec::new(4, TimeSeriesVariant::M1).unwrap();
        let x = Array1::zeros(4);
        let z = analytic_log_evidence(&spec, x.view()).unwrap();
        let c = Cholesky::new(&spec.marginal_covariance()).unwrap();
        let expect = -0.5 * (c.log_det() + 4.0 * (2.0 * std::f64::consts::PI).ln());
        assert!((z.log_evidence - expect).abs() < 1e-12);
        assert_eq!(z.stderr, 0.0);
        assert!(analytic_log_evidence(&spec, Array1::zeros(3).view()).is_err());
    }

    #[test]
    fn evidence_decreases_along_a_ray() {
        let spec = TimeSeriesModelSpec::new(5, TimeSeriesVariant::M0).unwrap();
        let dir = array![1.0, -2.0, 0.5, 3.0, 1.0];
        let mut prev = f64::INFINITY;
        for s in [0.0, 10.0, 50.0, 200.0, 1000.0] {
            let z = analytic_log_evidence(&spec, (&dir * s).view()).unwrap().log_evidence;
            assert!(z < prev);
            prev = z;
        }
    }

    #[test]
    fn identical_models_and_antisymmetry() {
        let spec = TimeSeriesModelSpec::new(6, TimeSeriesVariant::M1).unwrap();
        let oracle = TimeSeriesOracle::new(&spec).unwrap();
        let x = sample_time_series(&spec, 3, 1).row(0).to_owned();
        let m1 = oracle.log_evidence(TimeSeriesVariant::M1, x.view()).unwrap();
        let m0 = oracle.log_evidence(TimeSeriesVariant::M0, x.view()).unwrap();
        assert_eq!(m1 - m1, 0.0);
        assert_eq!(oracle.log_k(x.view()).unwrap(), m1 - m0);
        assert_eq!(-(m0 - m1), m1 - m0);
    }

    #[test]
    fn sampling_is_reproducible() {
        let spec = TimeSeriesModelSpec::new(5, TimeSeriesVariant::M1).unwrap();
        assert_eq!(sample_time_series(&spec, 9, 10), sample_time_series(&spec, 9, 10));
        assert_ne!(sample_time_series(&spec, 9, 10), sample_time_series(&spec, 10, 10));
    }

    #[test]
    fn mc_with_zero_design_is_exact() {
        let design = Array2::zeros((3, 3));
        let var = array![2.0, 3.0, 0.5];
        let x = array![0.3, -1.0, 0.2];
        let e = mc_log_evidence_with(&design, &var, x.view(), 1000, 1).unwrap();
        let c = Cholesky::new(&Array2::from_diag(&var)).unwrap();
        assert!((e.log_evidence - c.log_density(x.view(), Array1::zeros(3).view())).abs() < 1e-12);
        assert_eq!(e.stderr, 0.0);
        assert!(mc_log_evidence_with(&design, &var, x.view(), 999, 1).is_err());
    }

    #[test]
    fn mc_stderr_scales_with_draws() {
        let spec = TimeSeriesModelSpec::new(2, TimeSeriesVariant::M1).unwrap();
        let x = array![3.0, 15.0];
        let a = mc_log_evidence(&spec, x.view(), 40_000, 5).unwrap();
        let b = mc_log_evidence(&spec, x.view(), 80_000, 5).unwrap();
        let ratio = a.stderr / b.stderr;
        assert!((ratio - 2f64.sqrt()).abs() < 0.1, "ratio {ratio}");
    }
}
