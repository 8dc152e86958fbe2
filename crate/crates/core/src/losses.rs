//! Designer classification losses whose minimizers are known functions of the
//! Bayes factor.
//!
//! Each [`LossKind`] is a pointwise loss `V(f, m)` over a network output `f` and
//! a model label `m ∈ {0, 1}`. Minimizing the expected loss pointwise gives an
//! optimal output `f*` that depends on the data only through the posterior odds
//! `p(M₁|x) / p(M₀|x) = K · p(M₁)/p(M₀)`. [`decode_log_k`] inverts that map.
//!
//! | kind | `V(f, m)` | decoded `log K + Δ` |
//! |------|-----------|---------------------|
//! | `Polynomial` | `m(1−f)^α + (1−m) f^α` | `(α−1) · logit f` |
//! | `CrossEntropy` | `−m ln f − (1−m) ln(1−f)` | `logit f` |
//! | `Exponential` | `exp((½−m) f)` | `f` |
//! | `Logistic` | `ln(1 + exp((1−2m) f))` | `f` |
//! | `AlphaExponential` | `(1 + exp((1−2m) f))^(α−1)` | `α f` |
//! | `AlphaLogExponent` | `f^((½−m) α)` | `α ln f` |
//! | `LPopExponential` | `exp((½−m) J_α(f))` | `J_α(f)` |
//!
//! where `Δ = ln p(M₁)/p(M₀)` and `J_α(x) = x + x|x|^(α−1)` is the leaky
//! parity-odd power transform ([`lpop`]).
//!
//! The decoders are checked against [`optimal_f_oracle`], which minimizes
//! `p₁ V(f, 1) + p₀ V(f, 0)` numerically and never looks at the decoder formulas.
//!
//! Networks emit an unconstrained scalar. Kinds whose domain is bounded reach it
//! through an [`OutputLink`]: a logistic link for the probability-valued kinds and
//! an exponential link for `AlphaLogExponent`. The `*_raw` functions evaluate the
//! composed loss in closed form so saturated outputs never round to a boundary.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest exponent magnitude passed to `exp`. Beyond it the value is clamped and
/// the evaluation is flagged as saturated.
pub const MAX_EXP_ARG: f64 = 700.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    Polynomial,
    CrossEntropy,
    Exponential,
    Logistic,
    AlphaExponential,
    AlphaLogExponent,
    LpopExponential,
}

impl LossKind {
    pub const ALL: [LossKind; 7] = [
        LossKind::Polynomial,
        LossKind::CrossEntropy,
        LossKind::Exponential,
        LossKind::Logistic,
        LossKind::AlphaExponential,
        LossKind::AlphaLogExponent,
        LossKind::LpopExponential,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Polynomial => "polynomial",
            LossKind::CrossEntropy => "cross-entropy",
            LossKind::Exponential => "exponential",
            LossKind::Logistic => "logistic",
            LossKind::AlphaExponential => "alpha-exponential",
            LossKind::AlphaLogExponent => "alpha-log-exponent",
            LossKind::LpopExponential => "lpop-exponential",
        }
    }

    /// Whether the loss depends on `α`.
    pub fn uses_alpha(self) -> bool {
        matches!(
            self,
            LossKind::Polynomial | LossKind::AlphaExponential | LossKind::AlphaLogExponent | LossKind::LpopExponential
        )
    }

    pub fn link(self) -> OutputLink {
        match self {
            LossKind::Polynomial | LossKind::CrossEntropy => OutputLink::Logistic,
            LossKind::AlphaLogExponent => OutputLink::Exp,
            _ => OutputLink::Identity,
        }
    }

    fn domain(self) -> Domain {
        match self {
            LossKind::Polynomial | LossKind::CrossEntropy => Domain::UnitInterval,
            LossKind::AlphaLogExponent => Domain::Positive,
            _ => Domain::Real,
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(kind) = LossKind::ALL.into_iter().find(|k| k.name() == s) {
            return Ok(kind);
        }
        if s.starts_with("asymmetric") {
            return Err(invalid(
                "asymmetric losses are not supported; only label-symmetric losses are implemented",
            ));
        }
        Err(invalid(format!("unknown loss kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Domain {
    Real,
    UnitInterval,
    Positive,
}

/// Map from the raw network output to the loss argument `f`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputLink {
    Identity,
    Logistic,
    Exp,
}

impl OutputLink {
    pub fn apply(self, raw: f64) -> f64 {
        match self {
            OutputLink::Identity => raw,
            OutputLink::Logistic => sigmoid(raw),
            OutputLink::Exp => guarded_exp(raw).0,
        }
    }
}

/// A validated loss: kind, `α`, and the l-POP leak coefficient `β` (always 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LossFragment", into = "LossFragment")]
pub struct LossSpec {
    kind: LossKind,
    alpha: f64,
    beta: f64,
}

/// Config representation: `kind` and `alpha` only.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossFragment {
    pub kind: String,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    2.0
}

impl TryFrom<LossFragment> for LossSpec {
    type Error = Error;

    fn try_from(frag: LossFragment) -> Result<Self> {
        LossSpec::new(frag.kind.parse()?, frag.alpha)
    }
}

impl From<LossSpec> for LossFragment {
    fn from(spec: LossSpec) -> Self {
        LossFragment {
            kind: spec.kind.name().to_string(),
            alpha: spec.alpha,
        }
    }
}

impl Default for LossSpec {
    /// l-POP-Exponential with `α = 2`.
    fn default() -> Self {
        LossSpec {
            kind: LossKind::LpopExponential,
            alpha: 2.0,
            beta: 1.0,
        }
    }
}

impl LossSpec {
    pub fn new(kind: LossKind, alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(invalid(format!("{kind}: alpha must be finite")));
        }
        let ok = match kind {
            LossKind::Polynomial | LossKind::AlphaExponential => alpha > 1.0,
            LossKind::LpopExponential => alpha >= 1.0,
            LossKind::AlphaLogExponent => alpha > 0.0,
            LossKind::CrossEntropy | LossKind::Exponential | LossKind::Logistic => true,
        };
        if !ok {
            let need = match kind {
                LossKind::LpopExponential => "alpha >= 1",
                LossKind::AlphaLogExponent => "alpha > 0",
                _ => "alpha > 1",
            };
            return Err(invalid(format!("{kind}: requires {need}, got {alpha}")));
        }
        Ok(LossSpec { kind, alpha, beta: 1.0 })
    }

    /// Only `β = 1` is supported.
    pub fn with_beta(self, beta: f64) -> Result<Self> {
        if beta != 1.0 {
            return Err(invalid(format!("l-POP leak coefficient must be 1, got {beta}")));
        }
        Ok(self)
    }

    pub fn lpop_exponential(alpha: f64) -> Result<Self> {
        Self::new(LossKind::LpopExponential, alpha)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl fmt::Display for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.uses_alpha() {
            write!(f, "{}(alpha={})", self.kind, self.alpha)
        } else {
            write!(f, "{}", self.kind)
        }
    }
}

/// `ln p(M₁)/p(M₀)`, the log prior odds implied by the training label balance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModelPriorRatio(f64);

impl ModelPriorRatio {
    pub const EQUAL: ModelPriorRatio = ModelPriorRatio(0.0);

    pub fn new(log_ratio: f64) -> Result<Self> {
        if !log_ratio.is_finite() {
            return Err(invalid("log prior ratio must be finite"));
        }
        Ok(ModelPriorRatio(log_ratio))
    }

    /// Prior odds implied by `n1` label-1 and `n0` label-0 training rows.
    pub fn from_counts(n1: usize, n0: usize) -> Result<Self> {
        if n1 == 0 || n0 == 0 {
            return Err(invalid("both labels must be present to define prior odds"));
        }
        Self::new((n1 as f64 / n0 as f64).ln())
    }

    pub fn log_ratio(self) -> f64 {
        self.0
    }
}

/// `exp(arg)` with `|arg|` clamped to [`MAX_EXP_ARG`]; the flag reports clamping.
pub fn guarded_exp(arg: f64) -> (f64, bool) {
    if arg > MAX_EXP_ARG {
        (MAX_EXP_ARG.exp(), true)
    } else if arg < -MAX_EXP_ARG {
        ((-MAX_EXP_ARG).exp(), true)
    } else {
        (arg.exp(), false)
    }
}

pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eᵗ)` without overflow.
pub fn softplus(t: f64) -> f64 {
    if t > 0.0 {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

fn check_alpha_lpop(alpha: f64) -> Result<()> {
    if !(alpha >= 1.0) || !alpha.is_finite() {
        return Err(invalid(format!("l-POP transform requires alpha >= 1, got {alpha}")));
    }
    Ok(())
}

/// Leaky parity-odd power transform `J_α(x) = x + x|x|^(α−1)`.
///
/// `x * |x|^(α−1)` is evaluated directly; there is no sign function or
/// division by `|x|`, so `x = 0` needs no special case.
pub fn lpop(x: f64, alpha: f64) -> Result<f64> {
    check_alpha_lpop(alpha)?;
    Ok(lpop_unchecked(x, alpha))
}

#[inline]
fn lpop_unchecked(x: f64, alpha: f64) -> f64 {
    x + x * x.abs().powf(alpha - 1.0)
}

/// `J_α'(x) = 1 + α|x|^(α−1)`.
#[inline]
fn lpop_derivative(x: f64, alpha: f64) -> f64 {
    1.0 + alpha * x.abs().powf(alpha - 1.0)
}

/// The unique `y` with `J_α(y) = z`.
pub fn lpop_inverse(z: f64, alpha: f64) -> Result<f64> {
    check_alpha_lpop(alpha)?;
    if !z.is_finite() {
        return Err(invalid(format!("l-POP inverse of non-finite value {z}")));
    }
    let target = z.abs();
    let y = if target == 0.0 {
        0.0
    } else if alpha == 1.0 {
        target / 2.0
    } else if alpha == 2.0 {
        // (−1 + √(1+4z))/2, rationalized to avoid cancellation at small z.
        2.0 * target / (1.0 + (1.0 + 4.0 * target).sqrt())
    } else {
        lpop_inverse_positive(target, alpha)
    };
    Ok(y.copysign(z))
}

/// Newton iteration kept inside a shrinking bisection bracket, for `z > 0`.
fn lpop_inverse_positive(z: f64, alpha: f64) -> f64 {
    let tol = 1e-12 * z.max(1.0);
    // J(y) >= y and J(y) >= y^α on y >= 0.
    let mut lo = 0.0_f64;
    let mut hi = z.min(z.powf(1.0 / alpha));
    let mut y = 0.5 * (lo + hi);
    for _ in 0..200 {
        let r = lpop_unchecked(y, alpha) - z;
        if r.abs() <= tol {
            break;
        }
        if r > 0.0 {
            hi = y;
        } else {
            lo = y;
        }
        let newton = y - r / lpop_derivative(y, alpha);
        y = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    y
}

fn label_sign(m: u8) -> Result<f64> {
    match m {
        0 => Ok(0.5),
        1 => Ok(-0.5),
        _ => Err(invalid(format!("model label must be 0 or 1, got {m}"))),
    }
}

fn check_domain(spec: &LossSpec, f: f64) -> Result<()> {
    let (ok, range) = match spec.kind.domain() {
        Domain::Real => (f.is_finite(), "(-inf, inf)"),
        Domain::UnitInterval => (f > 0.0 && f < 1.0, "(0, 1)"),
        Domain::Positive => (f > 0.0 && f.is_finite(), "(0, inf)"),
    };
    if ok {
        Ok(())
    } else {
        Err(Error::Domain {
            kind: spec.kind.name(),
            value: f,
            range,
        })
    }
}

/// `V(f, m)` in the minimization convention.
pub fn loss_value(spec: &LossSpec, f: f64, m: u8) -> Result<f64> {
    check_domain(spec, f)?;
    let c = label_sign(m)?;
    let (mf, alpha) = (f64::from(m), spec.alpha);
    Ok(match spec.kind {
        LossKind::Polynomial => mf * (1.0 - f).powf(alpha) + (1.0 - mf) * f.powf(alpha),
        LossKind::CrossEntropy => {
            if m == 1 {
                -f.ln()
            } else {
                -(1.0 - f).ln()
            }
        }
        LossKind::Exponential => guarded_exp(c * f).0,
        LossKind::Logistic => softplus(2.0 * c * f),
        LossKind::AlphaExponential => guarded_exp((alpha - 1.0) * softplus(2.0 * c * f)).0,
        LossKind::AlphaLogExponent => guarded_exp(c * alpha * f.ln()).0,
        LossKind::LpopExponential => guarded_exp(c * lpop_unchecked(f, alpha)).0,
    })
}

/// `∂V/∂f`.
pub fn loss_grad(spec: &LossSpec, f: f64, m: u8) -> Result<f64> {
    check_domain(spec, f)?;
    let c = label_sign(m)?;
    let (mf, alpha) = (f64::from(m), spec.alpha);
    Ok(match spec.kind {
        LossKind::Polynomial => -mf * alpha * (1.0 - f).powf(alpha - 1.0) + (1.0 - mf) * alpha * f.powf(alpha - 1.0),
        LossKind::CrossEntropy => {
            if m == 1 {
                -1.0 / f
            } else {
                1.0 / (1.0 - f)
            }
        }
        LossKind::Exponential => c * guarded_exp(c * f).0,
        LossKind::Logistic => 2.0 * c * sigmoid(2.0 * c * f),
        LossKind::AlphaExponential => {
            let s = 2.0 * c;
            let v = guarded_exp((alpha - 1.0) * softplus(s * f)).0;
            (alpha - 1.0) * s * sigmoid(s * f) * v
        }
        LossKind::AlphaLogExponent => c * alpha * guarded_exp((c * alpha - 1.0) * f.ln()).0,
        LossKind::LpopExponential => c * lpop_derivative(f, alpha) * guarded_exp(c * lpop_unchecked(f, alpha)).0,
    })
}

/// Loss value, derivative with respect to the raw network output, and whether an
/// exponent was clamped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RawLoss {
    pub value: f64,
    pub grad: f64,
    pub saturated: bool,
}

/// `V(link(raw), m)` and its derivative in `raw`, evaluated without forming the
/// linked value where that would lose precision.
pub fn loss_raw(spec: &LossSpec, raw: f64, m: u8) -> Result<RawLoss> {
    if !raw.is_finite() {
        return Err(Error::Numeric(format!("non-finite network output {raw}")));
    }
    let c = label_sign(m)?;
    let alpha = spec.alpha;
    Ok(match spec.kind {
        LossKind::CrossEntropy => {
            // −ln σ(±raw)
            let s = 2.0 * c;
            RawLoss {
                value: softplus(s * raw),
                grad: s * sigmoid(s * raw),
                saturated: false,
            }
        }
        LossKind::Polynomial => {
            let (f, g) = (sigmoid(raw), sigmoid(-raw));
            let (value, dvdf) = if m == 1 {
                (g.powf(alpha), -alpha * g.powf(alpha - 1.0))
            } else {
                (f.powf(alpha), alpha * f.powf(alpha - 1.0))
            };
            RawLoss {
                value,
                grad: dvdf * f * g,
                saturated: false,
            }
        }
        LossKind::AlphaLogExponent => {
            let (value, saturated) = guarded_exp(c * alpha * raw);
            RawLoss {
                value,
                grad: c * alpha * value,
                saturated,
            }
        }
        LossKind::Exponential => {
            let (value, saturated) = guarded_exp(c * raw);
            RawLoss {
                value,
                grad: c * value,
                saturated,
            }
        }
        LossKind::LpopExponential => {
            let (value, saturated) = guarded_exp(c * lpop_unchecked(raw, alpha));
            RawLoss {
                value,
                grad: c * lpop_derivative(raw, alpha) * value,
                saturated,
            }
        }
        LossKind::Logistic => RawLoss {
            value: softplus(2.0 * c * raw),
            grad: 2.0 * c * sigmoid(2.0 * c * raw),
            saturated: false,
        },
        LossKind::AlphaExponential => {
            let s = 2.0 * c;
            let (value, saturated) = guarded_exp((alpha - 1.0) * softplus(s * raw));
            RawLoss {
                value,
                grad: (alpha - 1.0) * s * sigmoid(s * raw) * value,
                saturated,
            }
        }
    })
}

/// Log Bayes factor from an optimal loss argument `f`.
pub fn decode_log_k(spec: &LossSpec, f: f64, prior: ModelPriorRatio) -> Result<f64> {
    check_domain(spec, f)?;
    let log_odds = match spec.kind {
        LossKind::Exponential | LossKind::Logistic => f,
        LossKind::AlphaExponential => spec.alpha * f,
        LossKind::AlphaLogExponent => spec.alpha * f.ln(),
        LossKind::LpopExponential => lpop_unchecked(f, spec.alpha),
        LossKind::CrossEntropy => (f / (1.0 - f)).ln(),
        LossKind::Polynomial => (spec.alpha - 1.0) * (f / (1.0 - f)).ln(),
    };
    Ok(log_odds - prior.log_ratio())
}

/// Log Bayes factor from a raw network output; equal to
/// `decode_log_k(spec, link(raw), prior)` wherever the link does not saturate.
pub fn decode_raw(spec: &LossSpec, raw: f64, prior: ModelPriorRatio) -> f64 {
    let log_odds = match spec.kind {
        LossKind::Exponential | LossKind::Logistic => raw,
        LossKind::AlphaExponential => spec.alpha * raw,
        LossKind::LpopExponential => lpop_unchecked(raw, spec.alpha),
        // logit σ(raw) = raw, ln exp(raw) = raw
        LossKind::CrossEntropy => raw,
        LossKind::Polynomial => (spec.alpha - 1.0) * raw,
        LossKind::AlphaLogExponent => spec.alpha * raw,
    };
    log_odds - prior.log_ratio()
}

/// `p(M₁|x) = σ(log K + Δ)`.
pub fn decode_posterior(log_k: f64, prior: ModelPriorRatio) -> f64 {
    let t = log_k + prior.log_ratio();
    if t == f64::INFINITY {
        1.0
    } else if t == f64::NEG_INFINITY {
        0.0
    } else {
        sigmoid(t)
    }
}

/// Minimizes `g(f) = p₁ V(f, 1) + p₀ V(f, 0)` by bisection on the sign of `g'`.
///
/// `g` is convex on the loss domain for every supported kind, so the sign change
/// of `g'` brackets the unique minimizer. The search only evaluates
/// [`loss_grad`]; it shares no code with the decoders.
pub fn optimal_f_oracle(spec: &LossSpec, p1: f64, p0: f64) -> Result<f64> {
    if !(p1 >= 0.0 && p0 >= 0.0) || !(p1 + p0 > 0.0) || !p1.is_finite() || !p0.is_finite() {
        return Err(invalid(format!(
            "oracle needs p1, p0 >= 0 with p1 + p0 > 0, got {p1}, {p0}"
        )));
    }
    let dg = |f: f64| -> Result<f64> { Ok(p1 * loss_grad(spec, f, 1)? + p0 * loss_grad(spec, f, 0)?) };
    let unbounded = || {
        Error::Numeric(format!(
            "{spec}: objective has no interior minimizer for p1={p1}, p0={p0}"
        ))
    };

    let domain = spec.kind.domain();
    let (mut lo, mut hi) = match domain {
        Domain::UnitInterval => {
            // Walk the endpoints toward 0 and 1 until g' changes sign.
            let mut lo = 0.5;
            let mut hi = 0.5;
            let mut step = 0.25;
            while dg(lo)? > 0.0 {
                lo = step;
                step *= 0.5;
                if step < f64::MIN_POSITIVE {
                    return Err(unbounded());
                }
            }
            let mut gap = 0.25;
            while dg(hi)? < 0.0 {
                hi = 1.0 - gap;
                if hi == 1.0 {
                    return Err(unbounded());
                }
                gap *= 0.5;
            }
            (lo, hi)
        }
        Domain::Positive => {
            let (mut lo, mut hi) = (1.0, 1.0);
            let mut n = 0;
            while dg(lo)? > 0.0 {
                lo *= 0.5;
                n += 1;
                if n > 2000 || lo == 0.0 {
                    return Err(unbounded());
                }
            }
            n = 0;
            while dg(hi)? < 0.0 {
                hi *= 2.0;
                n += 1;
                if n > 2000 || !hi.is_finite() {
                    return Err(unbounded());
                }
            }
            (lo, hi)
        }
        Domain::Real => {
            let (mut lo, mut hi) = (-1.0, 1.0);
            let mut n = 0;
            while dg(lo)? > 0.0 {
                lo *= 2.0;
                n += 1;
                if n > 64 {
                    return Err(unbounded());
                }
            }
            n = 0;
            while dg(hi)? < 0.0 {
                hi *= 2.0;
                n += 1;
                if n > 64 {
                    return Err(unbounded());
                }
            }
            (lo, hi)
        }
    };

    // Bisect to float resolution; a stationarity tolerance alone does not pin f
    // where g is flat (e.g. α-log-exponent at large f).
    for _ in 0..4000 {
        let mid = if domain == Domain::Positive {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if mid <= lo || mid >= hi {
            break;
        }
        let d = dg(mid)?;
        if d == 0.0 {
            return Ok(mid);
        }
        if d < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: LossKind, alpha: f64) -> LossSpec {
        LossSpec::new(kind, alpha).unwrap()
    }

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn lpop_examples() {
        assert_eq!(lpop(0.0, 2.0).unwrap(), 0.0);
        assert_eq!(lpop(3.0, 2.0).unwrap(), 12.0);
        assert_eq!(lpop(-3.0, 2.0).unwrap(), -12.0);
        assert_eq!(lpop(5.0, 1.0).unwrap(), 10.0);
        assert!(lpop(1.0, 0.5).is_err());
    }

    #[test]
    fn lpop_inverse_examples() {
        assert!(close(lpop_inverse(12.0, 2.0).unwrap(), 3.0, 1e-14));
        assert!(close(lpop_inverse(-12.0, 2.0).unwrap(), -3.0, 1e-14));
        for alpha in [1.0, 1.5, 2.0, 3.0, 4.5] {
            assert_eq!(lpop_inverse(0.0, alpha).unwrap(), 0.0);
        }
        assert!(lpop_inverse(f64::NAN, 2.0).is_err());
        assert!(lpop_inverse(f64::INFINITY, 2.0).is_err());
    }

    #[test]
    fn lpop_inverse_residual_tolerance() {
        for alpha in [1.2, 1.5, 3.0, 7.0] {
            for z in [1e-9, 0.3, 1.0, 17.0, 1e4, 1e9] {
                let y = lpop_inverse(z, alpha).unwrap();
                let r = (lpop(y, alpha).unwrap() - z).abs();
                assert!(r <= 1e-12 * z.max(1.0) * 4.0, "alpha={alpha} z={z} r={r}");
            }
        }
    }

    #[test]
    fn loss_value_examples() {
        let e = |k| spec(k, 2.0);
        assert_eq!(loss_value(&e(LossKind::Exponential), 0.0, 1).unwrap(), 1.0);
        assert!(close(
            loss_value(&e(LossKind::Exponential), 2.0, 0).unwrap(),
            std::f64::consts::E,
            1e-12
        ));
        assert!(close(
            loss_value(&e(LossKind::LpopExponential), 1.0, 1).unwrap(),
            (-1.0f64).exp(),
            1e-12
        ));
        assert!(close(
            loss_value(&e(LossKind::CrossEntropy), 0.5, 1).unwrap(),
            std::f64::consts::LN_2,
            1e-12
        ));
    }

    #[test]
    fn loss_grad_examples() {
        let s = spec(LossKind::Exponential, 2.0);
        assert_eq!(loss_grad(&s, 0.0, 1).unwrap(), -0.5);
        assert_eq!(loss_grad(&s, 0.0, 0).unwrap(), 0.5);
    }

    #[test]
    fn domain_errors_name_the_kind() {
        let ce = spec(LossKind::CrossEntropy, 2.0);
        let err = loss_value(&ce, 1.0, 1).unwrap_err().to_string();
        assert!(err.contains("cross-entropy") && err.contains("(0, 1)"), "{err}");
        let al = spec(LossKind::AlphaLogExponent, 2.0);
        assert!(loss_grad(&al, -0.1, 0).is_err());
        assert!(decode_log_k(&spec(LossKind::Polynomial, 3.0), 0.0, ModelPriorRatio::EQUAL).is_err());
        assert!(loss_value(&spec(LossKind::Exponential, 2.0), 0.1, 2).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(LossSpec::new(LossKind::Polynomial, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Polynomial, 0.5).is_err());
        assert!(LossSpec::new(LossKind::LpopExponential, 0.99).is_err());
        assert!(LossSpec::new(LossKind::LpopExponential, 1.0).is_ok());
        assert!(LossSpec::new(LossKind::AlphaLogExponent, 0.0).is_err());
        assert!(LossSpec::new(LossKind::AlphaExponential, 1.0).is_err());
        assert!(LossSpec::new(LossKind::Exponential, f64::NAN).is_err());
        assert!(LossSpec::default().with_beta(0.5).is_err());
        assert!(LossSpec::default().with_beta(1.0).is_ok());
        let err = "asymmetric".parse::<LossKind>().unwrap_err().to_string();
        assert!(err.contains("asymmetric"));
    }

    #[test]
    fn decode_examples() {
        let eq = ModelPriorRatio::EQUAL;
        assert_eq!(decode_log_k(&spec(LossKind::Exponential, 2.0), 1.5, eq).unwrap(), 1.5);
        assert_eq!(
            decode_log_k(&spec(LossKind::LpopExponential, 2.0), 1.0, eq).unwrap(),
            2.0
        );
        assert!(close(
            decode_log_k(&spec(LossKind::CrossEntropy, 2.0), 0.75, eq).unwrap(),
            3.0f64.ln(),
            1e-12
        ));
        assert!(close(
            decode_log_k(&spec(LossKind::Polynomial, 3.0), 2.0 / 3.0, eq).unwrap(),
            4.0f64.ln(),
            1e-12
        ));
        let prior = ModelPriorRatio::new(0.7).unwrap();
        assert!(close(
            decode_log_k(&spec(LossKind::Exponential, 2.0), 1.5, prior).unwrap(),
            0.8,
            1e-12
        ));
    }

    #[test]
    fn posterior_examples() {
        let eq = ModelPriorRatio::EQUAL;
        assert_eq!(decode_posterior(0.0, eq), 0.5);
        assert!(close(decode_posterior(3.0f64.ln(), eq), 0.75, 1e-15));
        assert_eq!(decode_posterior(f64::INFINITY, eq), 1.0);
        assert_eq!(decode_posterior(f64::NEG_INFINITY, eq), 0.0);
        assert!(decode_posterior(-800.0, eq) >= 0.0);
        assert!(decode_posterior(800.0, eq) <= 1.0);
    }

    #[test]
    fn oracle_examples() {
        let e = optimal_f_oracle(&spec(LossKind::Exponential, 2.0), std::f64::consts::E, 1.0).unwrap();
        assert!(close(e, 1.0, 1e-10));
        let ce = optimal_f_oracle(&spec(LossKind::CrossEntropy, 2.0), 0.3, 0.3).unwrap();
        assert!(close(ce, 0.5, 1e-12));
        let poly = optimal_f_oracle(&spec(LossKind::Polynomial, 3.0), 4.0, 1.0).unwrap();
        assert!(close(poly, 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn oracle_rejects_boundary_optimum() {
        let err = optimal_f_oracle(&spec(LossKind::Exponential, 2.0), 1.0, 0.0);
        assert!(matches!(err, Err(Error::Numeric(_))));
        assert!(optimal_f_oracle(&spec(LossKind::Exponential, 2.0), 0.0, 0.0).is_err());
    }

    #[test]
    fn raw_losses_agree_with_linked_domain_losses() {
        for kind in LossKind::ALL {
            for alpha in [1.5, 2.0, 3.0] {
                let s = spec(kind, alpha);
                for raw in [-3.0, -0.4, 0.0, 0.7, 2.5] {
                    for m in [0u8, 1] {
                        let f = kind.link().apply(raw);
                        let direct = loss_value(&s, f, m).unwrap();
                        let composed = loss_raw(&s, raw, m).unwrap();
                        assert!(close(direct, composed.value, 1e-12 * direct.abs().max(1.0)));
                        // |x|^(α−1) has unbounded curvature at 0 for α < 2.
                        let fd_ok = !(raw == 0.0 && kind == LossKind::LpopExponential && alpha < 2.0);
                        let h = 1e-6;
                        let fd = (loss_raw(&s, raw + h, m).unwrap().value - loss_raw(&s, raw - h, m).unwrap().value)
                            / (2.0 * h);
                        assert!(
                            !fd_ok || close(fd, composed.grad, 1e-6 * composed.grad.abs().max(1.0)),
                            "{s} raw={raw} m={m} fd={fd} grad={}",
                            composed.grad
                        );
                        let d1 = decode_log_k(&s, f, ModelPriorRatio::EQUAL).unwrap();
                        let d2 = decode_raw(&s, raw, ModelPriorRatio::EQUAL);
                        assert!(close(d1, d2, 1e-9), "{s} raw={raw}");
                    }
                }
            }
        }
    }

    #[test]
    fn saturation_is_flagged_not_infinite() {
        let r = loss_raw(&LossSpec::default(), 40.0, 0).unwrap();
        assert!(r.saturated && r.value.is_finite() && r.grad.is_finite());
        assert!(loss_raw(&LossSpec::default(), f64::NAN, 0).is_err());
    }

    #[test]
    fn loss_fragment_round_trip_and_rejection() {
        let s: LossSpec = toml::from_str("kind = \"polynomial\"\nalpha = 3.0").unwrap();
        assert_eq!(s, spec(LossKind::Polynomial, 3.0));
        let text = toml::to_string(&s).unwrap();
        assert!(text.contains("kind = \"polynomial\"") && text.contains("alpha = 3.0"));
        assert!(toml::from_str::<LossSpec>("kind = \"polynomial\"\nalpha = 1.0").is_err());
        assert!(toml::from_str::<LossSpec>("kind = \"exponential\"\nbeta = 1.0").is_err());
    }
}
