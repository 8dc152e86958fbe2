#![allow(dead_code)]

use evnet::losses::{loss_raw, LossKind, LossSpec};
use evnet::models::timeseries::{build_design_matrix, noise_covariance, TimeSeriesModelSpec};
use evnet::nn::{Mode, Network};
use ndarray::{Array1, Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Every loss kind at each `α` in `alphas` it accepts; kinds without `α` once.
pub fn loss_grid(alphas: &[f64]) -> Vec<LossSpec> {
    let mut out = Vec::new();
    for kind in LossKind::ALL {
        if kind.uses_alpha() {
            out.extend(alphas.iter().filter_map(|&a| LossSpec::new(kind, a).ok()));
        } else {
            out.push(LossSpec::new(kind, 2.0).unwrap());
        }
    }
    out
}

pub fn normal_matrix(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

/// Mean training-mode loss of `net` on a batch.
pub fn batch_loss(net: &Network, x: ArrayView2<f64>, labels: &[u8], loss: &LossSpec) -> f64 {
    let (out, _) = net.forward_pure(x, Mode::Training).unwrap();
    out.iter()
        .zip(labels)
        .map(|(&f, &m)| loss_raw(loss, f, m).unwrap().value)
        .sum::<f64>()
        / labels.len() as f64
}

/// Network with every trainable value redrawn, so no gradient vanishes.
pub fn perturbed_network(input_dim: usize, seed: u64) -> Network {
    let mut net = Network::new(input_dim, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
    for (name, t) in net.trainable_mut() {
        let scale = if name.ends_with("gamma") { 0.3 } else { 0.5 };
        for v in t.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = if name.ends_with("gamma") {
                1.0 + scale * z
            } else {
                *v + scale * z
            };
        }
    }
    net
}

/// Largest relative difference between backprop and central finite
/// differences over every trainable parameter. Gradients below
/// `1e-6 · max(1, |L|)` are compared against that floor: biases feeding batch
/// norm have an exactly zero gradient, and their differences are rounding of
/// order `ε |L| / h`. Each parameter takes the best of three step sizes, since
/// a stencil can straddle a leaky-ReLU kink; a wrong gradient fails at all of
/// them.
pub fn max_gradient_error(loss: &LossSpec, input_dim: usize, batch: usize, seed: u64) -> f64 {
    scaled_gradient_error(loss, input_dim, batch, seed, 1.0)
}

/// [`max_gradient_error`] with the backprop gradients multiplied by `scale`.
pub fn scaled_gradient_error(loss: &LossSpec, input_dim: usize, batch: usize, seed: u64, scale: f64) -> f64 {
    let net = perturbed_network(input_dim, seed);
    let x = normal_matrix(batch, input_dim, seed + 1);
    let labels: Vec<u8> = (0..batch).map(|i| (i % 2) as u8).collect();

    let (out, trace) = net.forward_pure(x.view(), Mode::Training).unwrap();
    let dl: Vec<f64> = out
        .iter()
        .zip(&labels)
        .map(|(&f, &m)| loss_raw(loss, f, m).unwrap().grad)
        .collect();
    let grads = net.backward(&trace, &dl).unwrap();
    let analytic: Vec<Vec<f64>> = grads
        .tensors()
        .into_iter()
        .map(|(_, t)| t.iter().map(|v| v * scale).collect())
        .collect();

    let floor = 1e-6 * batch_loss(&net, x.view(), &labels, loss).abs().max(1.0);
    let mut worst: f64 = 0.0;
    let mut probe = net.clone();
    for (ti, tensor) in analytic.iter().enumerate() {
        for (j, &a) in tensor.iter().enumerate() {
            let mut eval = |delta: f64| {
                probe.trainable_mut()[ti].1[j] += delta;
                let v = batch_loss(&probe, x.view(), &labels, loss);
                probe.trainable_mut()[ti].1[j] -= delta;
                v
            };
            let err = [1e-4, 1e-5, 1e-6]
                .into_iter()
                .map(|h| {
                    let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                    (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor)
                })
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(err);
        }
    }
    worst
}

/// Marginal covariance `A Aᵀ + Σ` assembled from the public pieces.
pub fn marginal_covariance(spec: &TimeSeriesModelSpec) -> Array2<f64> {
    let a = build_design_matrix(spec).0;
    let mut c = a.dot(&a.t());
    for (k, s) in noise_covariance(spec.n()).0.iter().enumerate() {
        c[[k, k]] += s;
    }
    c
}

/// `ln N(x; mean, cov)` by Gaussian elimination with partial pivoting.
pub fn gaussian_log_density(x: &Array1<f64>, mean: &Array1<f64>, cov: &Array2<f64>) -> f64 {
    let n = x.len();
    let mut a = cov.clone();
    let mut b = x - mean;
    let mut log_det = 0.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))
            .unwrap();
        if pivot != col {
            for k in 0..n {
                a.swap([col, k], [pivot, k]);
            }
            b.swap(col, pivot);
        }
        let p = a[[col, col]];
        log_det += p.abs().ln();
        for i in col + 1..n {
            let f = a[[i, col]] / p;
            for k in col..n {
                a[[i, k]] -= f * a[[col, k]];
            }
            b[i] -= f * b[col];
        }
    }
    let mut sol = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[[i, k]] * sol[k]).sum();
        sol[i] = (b[i] - s) / a[[i, i]];
    }
    let quad = (x - mean).dot(&sol);
    -0.5 * (quad + log_det + n as f64 * (2.0 * std::f64::consts::PI).ln())
}

/// Solves `a y = b` for a small dense system.
pub fn solve(a: &Array2<f64>, b: &Array1<f64>) -> Array1<f64> {
    let n = b.len();
    let mut m = a.clone();
    let mut r = b.clone();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[[i, col]].abs().total_cmp(&m[[j, col]].abs()))
            .unwrap();
        for k in 0..n {
            m.swap([col, k], [pivot, k]);
        }
        r.swap(col, pivot);
        for i in col + 1..n {
            let f = m[[i, col]] / m[[col, col]];
            for k in col..n {
                m[[i, k]] -= f * m[[col, k]];
            }
            r[i] -= f * r[col];
        }
    }
    let mut y = Array1::zeros(n);
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| m[[i, k]] * y[k]).sum();
        y[i] = (r[i] - s) / m[[i, i]];
    }
    y
}

/// `ln p(x_h | x_o)` under `N(0, cov)`, with `o` the first `k` components, via
/// the Schur complement.
pub fn conditional_log_density(x: &Array1<f64>, cov: &Array2<f64>, k: usize) -> f64 {
    use ndarray::s;
    let n = x.len();
    let c_oo = cov.slice(s![..k, ..k]).to_owned();
    let c_ho = cov.slice(s![k.., ..k]).to_owned();
    let c_hh = cov.slice(s![k.., k..]).to_owned();
    let x_o = x.slice(s![..k]).to_owned();
    let x_h = x.slice(s![k..]).to_owned();
    let mean = c_ho.dot(&solve(&c_oo, &x_o));
    let mut schur = c_hh;
    for j in 0..n - k {
        let col = solve(&c_oo, &c_ho.row(j).to_owned());
        for i in 0..n - k {
            schur[[i, j]] -= c_ho.row(i).dot(&col);
        }
    }
    gaussian_log_density(&x_h, &mean, &schur)
}

/// `n` evenly spaced values on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}
