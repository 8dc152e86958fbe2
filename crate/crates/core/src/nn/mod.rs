//! A fixed-topology dense network with exact reverse-mode gradients.
//!
//! Layout, with `w₁ = round(1.1·d + 20)` for input dimension `d`:
//!
//! ```text
//! x ─ standardize ─ dense₀(w₁) ─ lrelu ─ bn₀
//!   ─ dense₁(16) ─ lrelu ─ bn₁ ──────────────────────────┐
//!   ─ dense₂(16) ─ lrelu ─ bn₂ ─ dense₃(16) ─ lrelu ─ (+) ─ bn₃
//!   ─ dense₄(16) ─ lrelu ─ dense₅(1) ─ f(x)
//! ```
//!
//! The input standardization is a fixed per-feature affine map set from the
//! training data; it is not trained. Everything is `f64`.

mod adam;
mod checkpoint;

pub use adam::Adam;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::rng;

pub const HIDDEN_WIDTH: usize = 16;
pub const DEFAULT_SLOPE: f64 = 0.3;
pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-3;

pub const N_DENSE: usize = 6;
pub const N_NORM: usize = 4;

/// Width of the first hidden layer, `1.1·d + 20` rounded half up.
pub fn first_width(input_dim: usize) -> usize {
    // (11 d + 200) / 10, rounded half up, in exact integer arithmetic.
    (11 * input_dim + 200 + 5) / 10
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn new(inputs: usize, outputs: usize, slope: f64, rng: &mut rng::Rng) -> Self {
        let std = (2.0 / (inputs as f64 * (1.0 + slope * slope))).sqrt();
        let normal = Normal::new(0.0, std).expect("positive std");
        Dense {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || normal.sample(rng)),
            bias: Array1::zeros(outputs),
        }
    }

    fn apply(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        BatchNorm {
            gamma: Array1::ones(width),
            beta: Array1::zeros(width),
            running_mean: Array1::zeros(width),
            running_var: Array1::ones(width),
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    fn infer(&self, x: &Array2<f64>) -> Array2<f64> {
        let scale = &self.gamma / &self.running_var.mapv(|v| (v + self.epsilon).sqrt());
        let shift = &self.beta - &(&self.running_mean * &scale);
        let mut y = x * &scale;
        y += &shift;
        y
    }

    fn train(&self, x: &Array2<f64>) -> (Array2<f64>, NormCache) {
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean;
        let var = centered.mapv(|v| v * v).sum_axis(Axis(0)) / n;
        let inv_std = var.mapv(|v| 1.0 / (v + self.epsilon).sqrt());
        let xhat = centered * &inv_std;
        let mut y = &xhat * &self.gamma;
        y += &self.beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    fn update_running(&mut self, cache: &NormCache) {
        let m = self.momentum;
        self.running_mean = &self.running_mean * m + &cache.mean * (1.0 - m);
        self.running_var = &self.running_var * m + &cache.var * (1.0 - m);
    }

    /// Returns `(dγ, dβ, dx)` for upstream gradient `dy`.
    fn backward(&self, cache: &NormCache, dy: &Array2<f64>) -> (Array1<f64>, Array1<f64>, Array2<f64>) {
        let n = dy.nrows() as f64;
        let dgamma = (dy * &cache.xhat).sum_axis(Axis(0));
        let dbeta = dy.sum_axis(Axis(0));
        let dxhat = dy * &self.gamma;
        let sum_dxhat = dxhat.sum_axis(Axis(0));
        let sum_dxhat_xhat = (&dxhat * &cache.xhat).sum_axis(Axis(0));
        let mut dx = dxhat * n;
        dx -= &sum_dxhat;
        dx -= &(&cache.xhat * &sum_dxhat_xhat);
        dx *= &(&cache.inv_std / n);
        (dgamma, dbeta, dx)
    }
}

#[derive(Debug, Clone)]
struct NormCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
    mean: Array1<f64>,
    var: Array1<f64>,
}

impl NormCache {
    /// Normalized activations before `γ` and `β` are applied.
    pub fn normalized(&self) -> &Array2<f64> {
        &self.xhat
    }
}

/// All weights, biases, and batch-norm state of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    input_dim: usize,
    slope: f64,
    pub input_shift: Array1<f64>,
    pub input_scale: Array1<f64>,
    pub dense: Vec<Dense>,
    pub norms: Vec<BatchNorm>,
}

/// Activations cached by a forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    mode: Mode,
    input_dim: usize,
    widths: [usize; N_DENSE],
    x: Array2<f64>,
    /// Pre-activations of dense₀..dense₄.
    pre: Vec<Array2<f64>>,
    /// Batch-norm outputs h₀..h₃.
    normed: Vec<Array2<f64>>,
    /// Activations fed to dense₅.
    last_hidden: Array2<f64>,
    norm_caches: Vec<NormCache>,
}

impl ForwardTrace {
    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn batch_size(&self) -> usize {
        self.x.nrows()
    }

    pub fn layer_count(&self) -> usize {
        self.pre.len() + 1
    }

    /// Pre-scale normalized activations of batch-norm layer `i` (training mode only).
    pub fn normalized(&self, i: usize) -> Option<&Array2<f64>> {
        self.norm_caches.get(i).map(NormCache::normalized)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormGrad {
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
}

/// Gradients with the shapes of the trainable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub dense: Vec<DenseGrad>,
    pub norms: Vec<NormGrad>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients {
            dense: net
                .dense
                .iter()
                .map(|d| DenseGrad {
                    weight: Array2::zeros(d.weight.raw_dim()),
                    bias: Array1::zeros(d.bias.len()),
                })
                .collect(),
            norms: net
                .norms
                .iter()
                .map(|b| NormGrad {
                    gamma: Array1::zeros(b.width()),
                    beta: Array1::zeros(b.width()),
                })
                .collect(),
        }
    }

    /// Flat views in the same order as [`Network::trainable_mut`].
    pub fn tensors(&self) -> Vec<(String, &[f64])> {
        let mut out = Vec::with_capacity(2 * (N_DENSE + N_NORM));
        for (i, d) in self.dense.iter().enumerate() {
            out.push((
                format!("dense_{i}.weight"),
                d.weight.as_slice().expect("standard layout"),
            ));
            out.push((format!("dense_{i}.bias"), d.bias.as_slice().expect("standard layout")));
        }
        for (i, b) in self.norms.iter().enumerate() {
            out.push((
                format!("batch_norm_{i}.gamma"),
                b.gamma.as_slice().expect("standard layout"),
            ));
            out.push((
                format!("batch_norm_{i}.beta"),
                b.beta.as_slice().expect("standard layout"),
            ));
        }
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, t)| t.iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

#[inline]
fn lrelu(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

fn lrelu_backward(dy: &mut Array2<f64>, pre: &Array2<f64>, slope: f64) {
    ndarray::Zip::from(dy).and(pre).for_each(|g, &z| {
        if z <= 0.0 {
            *g *= slope;
        }
    });
}

fn activate(mut z: Array2<f64>, slope: f64) -> Array2<f64> {
    z.mapv_inplace(|v| lrelu(v, slope));
    z
}

impl Network {
    /// A freshly initialized network for `input_dim` features.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Self::with_slope(input_dim, seed, DEFAULT_SLOPE)
    }

    pub fn with_slope(input_dim: usize, seed: u64, slope: f64) -> Result<Self> {
        if input_dim == 0 {
            return Err(invalid("input dimension must be at least 1"));
        }
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(invalid(format!(
                "leaky-ReLU slope must be finite and >= 0, got {slope}"
            )));
        }
        let mut rng = rng::stream(seed, rng::STREAM_INIT);
        let widths = Self::widths_for(input_dim);
        let mut dense = Vec::with_capacity(N_DENSE);
        let mut fan_in = input_dim;
        for &w in &widths {
            dense.push(Dense::new(fan_in, w, slope, &mut rng));
            fan_in = w;
        }
        // Zero output weights start every network at f = 0, where all losses are moderate.
        dense[N_DENSE - 1].weight.fill(0.0);
        let norms = vec![
            BatchNorm::new(widths[0]),
            BatchNorm::new(HIDDEN_WIDTH),
            BatchNorm::new(HIDDEN_WIDTH),
            BatchNorm::new(HIDDEN_WIDTH),
        ];
        Ok(Network {
            input_dim,
            slope,
            input_shift: Array1::zeros(input_dim),
            input_scale: Array1::ones(input_dim),
            dense,
            norms,
        })
    }

    fn widths_for(input_dim: usize) -> [usize; N_DENSE] {
        let h = HIDDEN_WIDTH;
        [first_width(input_dim), h, h, h, h, 1]
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width1(&self) -> usize {
        self.dense[0].outputs()
    }

    pub fn widths(&self) -> [usize; N_DENSE] {
        let mut w = [0; N_DENSE];
        for (slot, d) in w.iter_mut().zip(&self.dense) {
            *slot = d.outputs();
        }
        w
    }

    pub fn slope(&self) -> f64 {
        self.slope
    }

    pub fn parameter_count(&self) -> usize {
        self.dense.iter().map(|d| d.weight.len() + d.bias.len()).sum::<usize>()
            + self.norms.iter().map(|b| 2 * b.width()).sum::<usize>()
    }

    /// Sets the fixed input map `x ↦ (x − shift) · scale`.
    pub fn set_input_standardization(&mut self, shift: Array1<f64>, scale: Array1<f64>) -> Result<()> {
        if shift.len() != self.input_dim || scale.len() != self.input_dim {
            return Err(invalid("standardization vectors must match the input dimension"));
        }
        if scale.iter().any(|s| !s.is_finite() || *s <= 0.0) || shift.iter().any(|s| !s.is_finite()) {
            return Err(invalid("standardization must be finite with positive scale"));
        }
        self.input_shift = shift;
        self.input_scale = scale;
        Ok(())
    }

    /// Flat mutable views of every trainable tensor, with layer names.
    pub fn trainable_mut(&mut self) -> Vec<(String, &mut [f64])> {
        let mut out = Vec::with_capacity(2 * (N_DENSE + N_NORM));
        for (i, d) in self.dense.iter_mut().enumerate() {
            out.push((
                format!("dense_{i}.weight"),
                d.weight.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("dense_{i}.bias"),
                d.bias.as_slice_mut().expect("standard layout"),
            ));
        }
        for (i, b) in self.norms.iter_mut().enumerate() {
            out.push((
                format!("batch_norm_{i}.gamma"),
                b.gamma.as_slice_mut().expect("standard layout"),
            ));
            out.push((
                format!("batch_norm_{i}.beta"),
                b.beta.as_slice_mut().expect("standard layout"),
            ));
        }
        out
    }

    fn check_batch(&self, batch: &ArrayView2<f64>) -> Result<()> {
        if batch.ncols() != self.input_dim {
            return Err(invalid(format!(
                "batch has {} columns, network expects {}",
                batch.ncols(),
                self.input_dim
            )));
        }
        Ok(())
    }

    fn standardize(&self, batch: &ArrayView2<f64>) -> Array2<f64> {
        let mut x = batch - &self.input_shift;
        x *= &self.input_scale;
        x
    }

    /// Inference-mode outputs. Pure: takes `&self`.
    pub fn predict(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(&batch)?;
        let s = self.slope;
        let x = self.standardize(&batch);
        let h0 = self.norms[0].infer(&activate(self.dense[0].apply(&x.view()), s));
        let h1 = self.norms[1].infer(&activate(self.dense[1].apply(&h0.view()), s));
        let h2 = self.norms[2].infer(&activate(self.dense[2].apply(&h1.view()), s));
        let sum = activate(self.dense[3].apply(&h2.view()), s) + &h1;
        let h3 = self.norms[3].infer(&sum);
        let a4 = activate(self.dense[4].apply(&h3.view()), s);
        let out = self.dense[5].apply(&a4.view());
        Ok(out.column(0).to_owned())
    }

    /// Forward pass returning raw outputs and the trace needed by [`backward`].
    ///
    /// Training mode normalizes with batch statistics and folds them into the
    /// running statistics. Inference mode uses the running statistics and leaves
    /// the network untouched.
    ///
    /// [`backward`]: Network::backward
    pub fn forward(&mut self, batch: ArrayView2<f64>, mode: Mode) -> Result<(Array1<f64>, ForwardTrace)> {
        let (out, trace) = self.forward_pure(batch, mode)?;
        if mode == Mode::Training {
            for (bn, cache) in self.norms.iter_mut().zip(&trace.norm_caches) {
                bn.update_running(cache);
            }
        }
        Ok((out, trace))
    }

    /// Forward pass that never touches running statistics.
    pub fn forward_pure(&self, batch: ArrayView2<f64>, mode: Mode) -> Result<(Array1<f64>, ForwardTrace)> {
        self.check_batch(&batch)?;
        if mode == Mode::Training && batch.nrows() < 2 {
            return Err(invalid("training-mode forward needs at least 2 rows"));
        }
        let s = self.slope;
        let x = self.standardize(&batch);
        let mut pre = Vec::with_capacity(N_DENSE - 1);
        let mut normed = Vec::with_capacity(N_NORM);
        let mut caches = Vec::with_capacity(N_NORM);

        let norm = |i: usize, input: &Array2<f64>, caches: &mut Vec<NormCache>| match mode {
            Mode::Training => {
                let (y, c) = self.norms[i].train(input);
                caches.push(c);
                y
            }
            Mode::Inference => self.norms[i].infer(input),
        };

        let mut h = x.view().to_owned();
        for i in 0..3 {
            let z = self.dense[i].apply(&h.view());
            let a = activate(z.clone(), s);
            pre.push(z);
            h = norm(i, &a, &mut caches);
            normed.push(h.clone());
        }
        let z3 = self.dense[3].apply(&h.view());
        let sum = activate(z3.clone(), s) + &normed[1];
        pre.push(z3);
        let h3 = norm(3, &sum, &mut caches);
        normed.push(h3.clone());
        let z4 = self.dense[4].apply(&h3.view());
        let a4 = activate(z4.clone(), s);
        pre.push(z4);
        let out = self.dense[5].apply(&a4.view()).column(0).to_owned();

        Ok((
            out,
            ForwardTrace {
                mode,
                input_dim: self.input_dim,
                widths: self.widths(),
                x,
                pre,
                normed,
                last_hidden: a4,
                norm_caches: caches,
            },
        ))
    }

    /// Exact gradients of `(1/n) Σᵢ output_grads[i] · f(xᵢ)` with respect to every
    /// trainable parameter, including the paths through batch statistics.
    pub fn backward(&self, trace: &ForwardTrace, output_grads: &[f64]) -> Result<Gradients> {
        if trace.mode != Mode::Training {
            return Err(invalid("backward needs a training-mode trace"));
        }
        if trace.input_dim != self.input_dim || trace.widths != self.widths() {
            return Err(invalid("trace was produced by a network with a different shape"));
        }
        let n = trace.batch_size();
        if output_grads.len() != n {
            return Err(invalid(format!(
                "{} output gradients for a batch of {n}",
                output_grads.len()
            )));
        }
        let s = self.slope;
        let mut grads = Gradients::zeros_like(self);

        let g_out = Array2::from_shape_fn((n, 1), |(i, _)| output_grads[i] / n as f64);
        // dense₅
        grads.dense[5].weight = g_out.t().dot(&trace.last_hidden);
        grads.dense[5].bias = g_out.sum_axis(Axis(0));
        let mut g = g_out.dot(&self.dense[5].weight);

        // dense₄ ← bn₃ output
        lrelu_backward(&mut g, &trace.pre[4], s);
        self.dense_backward(4, &g, &trace.normed[3], &mut grads);
        let g_h3 = g.dot(&self.dense[4].weight);

        // bn₃ over (a₃ + h₁)
        let (dg, db, g_sum) = self.norms[3].backward(&trace.norm_caches[3], &g_h3);
        grads.norms[3] = NormGrad { gamma: dg, beta: db };
        let skip = g_sum.clone();

        // dense₃ ← h₂
        let mut g = g_sum;
        lrelu_backward(&mut g, &trace.pre[3], s);
        self.dense_backward(3, &g, &trace.normed[2], &mut grads);
        let g_h2 = g.dot(&self.dense[3].weight);

        // bn₂, dense₂ ← h₁
        let (dg, db, mut g) = self.norms[2].backward(&trace.norm_caches[2], &g_h2);
        grads.norms[2] = NormGrad { gamma: dg, beta: db };
        lrelu_backward(&mut g, &trace.pre[2], s);
        self.dense_backward(2, &g, &trace.normed[1], &mut grads);
        let g_h1 = g.dot(&self.dense[2].weight) + &skip;

        // bn₁, dense₁ ← h₀
        let (dg, db, mut g) = self.norms[1].backward(&trace.norm_caches[1], &g_h1);
        grads.norms[1] = NormGrad { gamma: dg, beta: db };
        lrelu_backward(&mut g, &trace.pre[1], s);
        self.dense_backward(1, &g, &trace.normed[0], &mut grads);
        let g_h0 = g.dot(&self.dense[1].weight);

        // bn₀, dense₀ ← standardized input
        let (dg, db, mut g) = self.norms[0].backward(&trace.norm_caches[0], &g_h0);
        grads.norms[0] = NormGrad { gamma: dg, beta: db };
        lrelu_backward(&mut g, &trace.pre[0], s);
        self.dense_backward(0, &g, &trace.x, &mut grads);

        Ok(grads)
    }

    fn dense_backward(&self, i: usize, dz: &Array2<f64>, input: &Array2<f64>, grads: &mut Gradients) {
        grads.dense[i].weight = dz.t().dot(input);
        grads.dense[i].bias = dz.sum_axis(Axis(0));
    }
}
