//! Rastrigin and Gaussian priors with additive Gaussian noise.
//!
//! Per dimension, `p(θ|M₁) ∝ exp(−θ²/4 + 10(cos 2πθ − 1))` and
//! `p(θ|M₀) ∝ exp(−θ²/4)`; the data are `x = θ + σ z`. Everything factorizes
//! across dimensions, so `ln K` is a sum of one-dimensional log-integral
//! differences.

use ndarray::{Array2, ArrayView1};
use rand::Rng as _;
use rand_distr::StandardNormal;
use std::f64::consts::{PI, SQRT_2};

use super::quadrature::{integrate, QuadOptions};
use crate::error::{invalid, Error, Result};
use crate::rng::{self, Rng};

/// Half-width of the quadrature window.
pub const WINDOW: f64 = 12.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RastriginVariant {
    Rastrigin,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RastriginModelSpec {
    n: usize,
    noise_var: f64,
    variant: RastriginVariant,
}

pub fn rastrigin_log_prior_unnorm(theta: f64, variant: RastriginVariant) -> f64 {
    let gauss = -0.25 * theta * theta;
    match variant {
        RastriginVariant::Rastrigin => gauss + 10.0 * ((2.0 * PI * theta).cos() - 1.0),
        RastriginVariant::Gaussian => gauss,
    }
}

/// Acceptance probability of the rejection step under the `N(0, 2)` envelope.
fn acceptance(theta: f64) -> f64 {
    (10.0 * ((2.0 * PI * theta).cos() - 1.0)).exp()
}

/// One prior draw and the number of proposals it took.
pub fn sample_theta(rng: &mut Rng, variant: RastriginVariant) -> (f64, u64) {
    let mut proposals = 0;
    loop {
        proposals += 1;
        let z: f64 = rng.sample(StandardNormal);
        let theta = SQRT_2 * z;
        match variant {
            RastriginVariant::Gaussian => return (theta, proposals),
            RastriginVariant::Rastrigin => {
                if rng.random::<f64>() < acceptance(theta) {
                    return (theta, proposals);
                }
            }
        }
    }
}

impl RastriginModelSpec {
    pub fn new(n: usize, noise_var: f64, variant: RastriginVariant) -> Result<Self> {
        if n == 0 {
            return Err(invalid("Rastrigin models need n >= 1"));
        }
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        Ok(RastriginModelSpec { n, noise_var, variant })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    pub fn variant(&self) -> RastriginVariant {
        self.variant
    }

    pub fn sample_with(&self, rng: &mut Rng, count: usize) -> Array2<f64> {
        let sd = self.noise_var.sqrt();
        let mut out = Array2::zeros((count, self.n));
        for v in out.iter_mut() {
            let (theta, _) = sample_theta(rng, self.variant);
            let z: f64 = rng.sample(StandardNormal);
            *v = theta + sd * z;
        }
        out
    }
}

/// `count` rows of `x = θ + σ z`.
pub fn sample_rastrigin_data(spec: &RastriginModelSpec, seed: u64, count: usize) -> Array2<f64> {
    spec.sample_with(&mut rng::stream(seed, 0), count)
}

/// Quadrature oracle for the per-dimension evidences at a fixed noise level.
#[derive(Debug, Clone)]
pub struct RastriginOracle {
    noise_var: f64,
    window: f64,
    log_norm: [f64; 2],
}

fn quad_options() -> QuadOptions {
    QuadOptions {
        abs_tol: 1e-10,
        rel_tol: 1e-12,
        // Panel width 1/4 resolves the separated modes before refinement.
        initial_panels: 96,
        max_panels: 50_000,
    }
}

/// `ln ∫ exp(g)` over `[−w, w]`, integrating `exp(g − max g)`.
fn log_integral(g: impl Fn(f64) -> f64, w: f64, opts: QuadOptions) -> Result<f64> {
    let steps = 4800;
    let mut peak = f64::NEG_INFINITY;
    for i in 0..=steps {
        peak = peak.max(g(-w + 2.0 * w * i as f64 / steps as f64));
    }
    let (value, _) = integrate(|t| (g(t) - peak).exp(), -w, w, opts)?;
    if !(value > 0.0) {
        return Err(Error::Numeric("evidence integral vanished".into()));
    }
    Ok(peak + value.ln())
}

impl RastriginOracle {
    pub fn new(noise_var: f64) -> Result<Self> {
        Self::with_window(noise_var, WINDOW)
    }

    pub fn with_window(noise_var: f64, window: f64) -> Result<Self> {
        if !(noise_var > 0.0 && noise_var.is_finite()) {
            return Err(invalid(format!("noise variance must be positive, got {noise_var}")));
        }
        let mut log_norm = [0.0; 2];
        for (slot, variant) in [RastriginVariant::Gaussian, RastriginVariant::Rastrigin]
            .into_iter()
            .enumerate()
        {
            log_norm[slot] = log_integral(|t| rastrigin_log_prior_unnorm(t, variant), window, quad_options())?;
        }
        Ok(RastriginOracle {
            noise_var,
            window,
            log_norm,
        })
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// `ln ∫ p(θ|M) dθ` for the unnormalized prior.
    pub fn log_normalizer(&self, variant: RastriginVariant) -> f64 {
        match variant {
            RastriginVariant::Gaussian => self.log_norm[0],
            RastriginVariant::Rastrigin => self.log_norm[1],
        }
    }

    /// `ln ∫ N(x; θ, σ²) p(θ|M) dθ` for a single coordinate.
    pub fn log_evidence_1d(&self, x: f64, variant: RastriginVariant) -> Result<f64> {
        if !x.is_finite() {
            return Err(invalid(format!("data value must be finite, got {x}")));
        }
        // Both priors are even, so the evidence depends on |x| only.
        let x = x.abs();
        let s2 = self.noise_var;
        let g = |t: f64| -0.5 * (x - t) * (x - t) / s2 + rastrigin_log_prior_unnorm(t, variant);
        let log_int = log_integral(g, self.window, quad_options())?;
        Ok(log_int - 0.5 * (2.0 * PI * s2).ln() - self.log_normalizer(variant))
    }

    /// `ln Z(x|M)` summed over coordinates.
    pub fn log_evidence(&self, x: ArrayView1<f64>, variant: RastriginVariant) -> Result<f64> {
        x.iter().map(|&v| self.log_evidence_1d(v, variant)).sum()
    }

    /// `ln K` of the Rastrigin prior against the Gaussian prior.
    pub fn log_k(&self, x: ArrayView1<f64>) -> Result<f64> {
        Ok(self.log_evidence(x, RastriginVariant::Rastrigin)? - self.log_evidence(x, RastriginVariant::Gaussian)?)
    }
}

/// `ln K(x)` for the Rastrigin pair at noise variance `noise_var`.
pub fn rastrigin_log_k_oracle(x: ArrayView1<f64>, noise_var: f64) -> Result<f64> {
    RastriginOracle::new(noise_var)?.log_k(x)
}
