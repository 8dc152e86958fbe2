use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ndarray::{Array1, Axis};
use rayon::prelude::*;
use serde_json::json;

use super::config::RunConfig;
use super::Outcome;
use crate::data::{generate_training_set, Dataset};
use crate::error::{invalid, Error, Result};
use crate::evaluation::{coverage_test, rmse_log_k, square_grid};
use crate::models::gaussian::{baseline_log_k, fit_gaussian_mle};
use crate::models::timeseries::{mc_log_evidence, TimeSeriesVariant};
use crate::models::{ModelPair, TruthOracle};
use crate::training::{train_ensemble, Ensemble};

/// Mixed into the run seed for the evaluation dataset.
pub const EVAL_SEED_SALT: u64 = 0x5eed_0e7a_1da7_a5e7;

/// Bins of the residual histograms written by `baseline`.
const HISTOGRAM_BINS: usize = 40;

pub struct Context {
    pub out: PathBuf,
    pub cfg: RunConfig,
    pub name: &'static str,
    pub hash: String,
}

fn with_path(path: &Path) -> impl FnOnce(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>> {
    let open = || -> Result<fs::File> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent)?;
        }
        Ok(fs::File::create(path)?)
    };
    open().map(BufWriter::new).map_err(with_path(path))
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut w = create_file(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Format(e.to_string()))?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

fn num(v: f64) -> String {
    v.to_string()
}

impl Context {
    /// Creates the output directory and writes the resolved config into it.
    pub fn new(out: PathBuf, cfg: RunConfig, name: &'static str) -> Result<Self> {
        fs::create_dir_all(&out).map_err(|e| with_path(&out)(e.into()))?;
        let hash = cfg.hash();
        let ctx = Context { out, cfg, name, hash };
        let path = ctx.file(&format!("{name}.resolved.toml"));
        fs::write(&path, ctx.cfg.to_toml()).map_err(|e| with_path(&path)(e.into()))?;
        Ok(ctx)
    }

    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        self.out.join(p)
    }

    fn load_dataset(&self, p: &Path) -> Result<Dataset> {
        let path = self.resolve(p);
        Dataset::load(&path).map_err(with_path(&path))
    }

    fn load_ensemble(&self) -> Result<Ensemble> {
        let path = self.resolve(&self.cfg.io.checkpoints);
        Ensemble::load_dir(&path).map_err(with_path(&path))
    }

    fn truth(&self, data: &Dataset) -> Result<Option<(TruthOracle, Array1<f64>)>> {
        if self.cfg.model.is_none() {
            return Ok(None);
        }
        let pair = self.cfg.pair()?;
        check_dim("model", pair.dim(), data.dim())?;
        let oracle = pair.oracle()?;
        let values = oracle.log_k_rows(data.data())?;
        Ok(Some((oracle, values)))
    }

    fn csv_writer(&self, name: &str) -> Result<csv::Writer<BufWriter<fs::File>>> {
        Ok(csv::Writer::from_writer(create_file(&self.file(name))?))
    }

    fn summary(&self, mut body: serde_json::Value) -> Result<()> {
        body["command"] = json!(self.name);
        body["seed"] = json!(self.cfg.seed);
        body["config_hash"] = json!(self.hash);
        write_json(&self.file(&format!("{}.summary.json", self.name)), &body)
    }
}

fn check_dim(what: &str, expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(invalid(format!(
            "{what} expects dimension {expected}, but the data has dimension {found}"
        )));
    }
    Ok(())
}

fn dataset_entry(path: &Path, d: &Dataset) -> serde_json::Value {
    let (ones, zeros) = d.label_counts();
    json!({
        "path": path,
        "rows": d.len(),
        "dim": d.dim(),
        "label_1": ones,
        "label_0": zeros,
    })
}

pub fn gen_data(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let pair = cfg.pair()?;
    let train = generate_training_set(&pair, cfg.data.n_per_model, cfg.seed)?;
    let eval = generate_training_set(&pair, cfg.data.eval_n_per_model, cfg.seed ^ EVAL_SEED_SALT)?;
    let train_path = ctx.resolve(&cfg.io.train_data);
    let eval_path = ctx.resolve(&cfg.io.eval_data);
    for (d, path) in [(&train, &train_path), (&eval, &eval_path)] {
        let mut w = create_file(path)?;
        d.write_to(&mut w).map_err(with_path(path))?;
        w.flush()?;
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let manifest = json!({
        "command": ctx.name,
        "created_unix": created,
        "seed": cfg.seed,
        "config_hash": ctx.hash,
        "model": cfg.model,
        "train": dataset_entry(&train_path, &train),
        "eval": dataset_entry(&eval_path, &eval),
    });
    write_json(&ctx.file("gen-data.manifest.json"), &manifest)?;
    eprintln!(
        "wrote {} training rows to {} and {} evaluation rows to {}",
        train.len(),
        train_path.display(),
        eval.len(),
        eval_path.display()
    );
    Ok(Outcome::Success)
}

fn train_and_save(ctx: &Context, data: &Dataset) -> Result<Ensemble> {
    let cfg = &ctx.cfg;
    let ensemble = train_ensemble(cfg.ensemble.members, data, &cfg.loss, &cfg.train, None)?;
    let dir = ctx.resolve(&cfg.io.checkpoints);
    ensemble.save_dir(&dir).map_err(with_path(&dir))?;
    for (i, m) in ensemble.members.iter().enumerate() {
        eprintln!(
            "member {i}: best epoch {} of {}, validation loss {:.6}",
            m.history.best_epoch,
            m.history.epochs.len(),
            m.history.best_val_loss()
        );
    }
    Ok(ensemble)
}

pub fn train(ctx: &Context) -> Result<Outcome> {
    let data = ctx.load_dataset(&ctx.cfg.io.train_data)?;
    if ctx.cfg.model.is_some() {
        check_dim("model", ctx.cfg.pair()?.dim(), data.dim())?;
    }
    let ensemble = train_and_save(ctx, &data)?;
    let members: Vec<_> = ensemble
        .members
        .iter()
        .map(|m| {
            json!({
                "best_epoch": m.history.best_epoch,
                "epochs": m.history.epochs.len(),
                "best_val_loss": m.history.best_val_loss(),
            })
        })
        .collect();
    ctx.summary(json!({ "checkpoints": ctx.resolve(&ctx.cfg.io.checkpoints), "members": members }))?;
    Ok(Outcome::Success)
}

fn read_observed(path: &Path) -> Result<Array1<f64>> {
    let text = fs::read_to_string(path).map_err(|e| with_path(path)(e.into()))?;
    let values = text
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| invalid(format!("{}: not a number: {s:?}", path.display())))
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.is_empty() {
        return Err(invalid(format!("{}: no values", path.display())));
    }
    Ok(Array1::from(values))
}

pub fn eval(ctx: &Context, observed: Option<&Path>) -> Result<Outcome> {
    let ensemble = ctx.load_ensemble()?;
    if let Some(path) = observed {
        let x = read_observed(path)?;
        check_dim("ensemble", ensemble.input_dim(), x.len())?;
        let (lk, err) = ensemble.log_k(x.insert_axis(Axis(0)).view())?;
        println!(
            "ln K = {:.6} ± {:.6} (log10 K = {:.6})",
            lk[0],
            err[0],
            lk[0] / std::f64::consts::LN_10
        );
        return Ok(Outcome::Success);
    }
    let data = ctx.load_dataset(&ctx.cfg.io.eval_data)?;
    check_dim("ensemble", ensemble.input_dim(), data.dim())?;
    let (lk, err) = ensemble.log_k(data.data())?;
    let truth = ctx.truth(&data)?.map(|(_, t)| t);

    let mut w = ctx.csv_writer("predictions.csv")?;
    let mut header = vec!["index", "label", "log_k", "stderr"];
    if truth.is_some() {
        header.extend(["log_k_true", "residual"]);
    }
    w.write_record(&header).map_err(csv_err)?;
    for i in 0..data.len() {
        let mut row = vec![i.to_string(), data.labels()[i].to_string(), num(lk[i]), num(err[i])];
        if let Some(t) = &truth {
            row.extend([num(t[i]), num(lk[i] - t[i])]);
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;

    let mut body = json!({ "n": data.len(), "members": ensemble.len() });
    if let Some(t) = &truth {
        let rmse = rmse_log_k(lk.view(), t.view())?;
        body["rmse_log_k"] = json!(rmse);
        eprintln!("RMSE(ln K) = {rmse:.6} over {} samples", data.len());
    }
    ctx.summary(body)?;
    Ok(Outcome::Success)
}

pub fn coverage(ctx: &Context, scale: f64) -> Result<Outcome> {
    if !scale.is_finite() {
        return Err(invalid("--debug-scale-logits must be finite"));
    }
    let ensemble = ctx.load_ensemble()?;
    let data = ctx.load_dataset(&ctx.cfg.io.eval_data)?;
    check_dim("ensemble", ensemble.input_dim(), data.dim())?;
    let (lk, _) = ensemble.log_k(data.data())?;
    let lk = lk * scale;
    let report = coverage_test(
        lk.view(),
        data.labels(),
        ctx.cfg.eval.bins,
        ctx.cfg.eval.min_count,
        ensemble.prior,
    )?;
    let w = create_file(&ctx.file("coverage.csv"))?;
    report.write_csv(w)?;
    let passed = report.passed();
    ctx.summary(json!({
        "passed": passed,
        "logit_scale": scale,
        "report": report,
    }))?;
    let std = report.residual_std.map_or("n/a".to_string(), |s| format!("{s:.4}"));
    eprintln!(
        "coverage {}: residual mean {:.4}, std {std}, {} of {} bins included",
        if passed { "passed" } else { "FAILED" },
        report.residual_mean,
        report.bins.len() - report.excluded_bins.len(),
        report.bins.len()
    );
    Ok(if passed {
        Outcome::Success
    } else {
        Outcome::CalibrationFailed
    })
}

pub fn rastrigin(ctx: &Context, load: bool) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let pair = cfg.pair()?;
    if !matches!(pair, ModelPair::Rastrigin { n: 2, .. }) {
        return Err(Error::Config(
            "rastrigin needs model.family = \"rastrigin\" with n = 2".into(),
        ));
    }
    if cfg.eval.grid < 2 {
        return Err(Error::Config("eval.grid must be >= 2".into()));
    }
    let ensemble = if load {
        ctx.load_ensemble()?
    } else {
        let data = generate_training_set(&pair, cfg.data.n_per_model, cfg.seed)?;
        train_and_save(ctx, &data)?
    };
    check_dim("ensemble", ensemble.input_dim(), 2)?;
    let grid = square_grid(cfg.eval.grid, 2.0);
    let (net, _) = ensemble.log_k(grid.view())?;
    let oracle = pair.oracle()?.log_k_rows(grid.view())?;

    let mut w = ctx.csv_writer("rastrigin_grid.csv")?;
    w.write_record(["x1", "x2", "log_k_network", "log_k_oracle"])
        .map_err(csv_err)?;
    for (i, row) in grid.rows().into_iter().enumerate() {
        w.write_record([num(row[0]), num(row[1]), num(net[i]), num(oracle[i])])
            .map_err(csv_err)?;
    }
    w.flush()?;

    let rmse = rmse_log_k(net.view(), oracle.view())?;
    let max_abs = oracle.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ctx.summary(json!({
        "points": grid.nrows(),
        "rmse_log_k": rmse,
        "oracle_min": oracle.iter().copied().fold(f64::INFINITY, f64::min),
        "oracle_max": oracle.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        "oracle_max_abs": max_abs,
    }))?;
    eprintln!(
        "RMSE(ln K) = {rmse:.6} on {} grid points; max |ln K_oracle| = {max_abs:.6}",
        grid.nrows()
    );
    Ok(Outcome::Success)
}

fn label_rows(data: &Dataset, label: u8, limit: usize) -> Vec<usize> {
    (0..data.len())
        .filter(|&i| data.labels()[i] == label)
        .take(limit)
        .collect()
}

/// Equal-width histogram counts of `values` over `[lo, hi]`.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = if width > 0.0 { ((v - lo) / width) as usize } else { 0 };
        counts[b.min(bins - 1)] += 1;
    }
    counts
}

pub fn baseline(ctx: &Context) -> Result<Outcome> {
    let cfg = &ctx.cfg;
    let train = ctx.load_dataset(&cfg.io.train_data)?;
    let eval = ctx.load_dataset(&cfg.io.eval_data)?;
    check_dim("training data", train.dim(), eval.dim())?;
    let (_, truth) = ctx
        .truth(&eval)?
        .ok_or_else(|| Error::Config("baseline needs a [model] section for oracle truths".into()))?;
    let ensemble = ctx.load_ensemble()?;
    check_dim("ensemble", ensemble.input_dim(), eval.dim())?;

    let k = cfg.eval.baseline_fit_samples;
    let fit1 = fit_gaussian_mle(train.data().select(Axis(0), &label_rows(&train, 1, k)).view())?;
    let fit0 = fit_gaussian_mle(train.data().select(Axis(0), &label_rows(&train, 0, k)).view())?;
    let base: Vec<f64> = (0..eval.len())
        .into_par_iter()
        .map(|i| baseline_log_k(&fit1, &fit0, eval.data().row(i)))
        .collect::<Result<_>>()?;
    let base = Array1::from(base);
    let (net, _) = ensemble.log_k(eval.data())?;

    let methods = [("gaussian-mle", &base), ("evidence-network", &net)];
    let residuals: Vec<Vec<f64>> = methods
        .iter()
        .map(|(_, est)| est.iter().zip(&truth).map(|(e, t)| e - t).collect())
        .collect();

    let mut w = ctx.csv_writer("baseline_residuals.csv")?;
    w.write_record(["method", "index", "log_k", "log_k_true", "residual"])
        .map_err(csv_err)?;
    for ((name, est), res) in methods.iter().zip(&residuals) {
        for i in 0..eval.len() {
            w.write_record([name.to_string(), i.to_string(), num(est[i]), num(truth[i]), num(res[i])])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let all = residuals.iter().flatten().copied();
    let lo = all.clone().fold(f64::INFINITY, f64::min);
    let hi = all.fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(Error::Numeric("non-finite residuals".into()));
    }
    let width = (hi - lo) / HISTOGRAM_BINS as f64;
    let mut w = ctx.csv_writer("baseline_histogram.csv")?;
    w.write_record(["method", "bin_lo", "bin_hi", "count"])
        .map_err(csv_err)?;
    for ((name, _), res) in methods.iter().zip(&residuals) {
        for (b, c) in histogram(res, lo, hi, HISTOGRAM_BINS).into_iter().enumerate() {
            let edge = |j: usize| if j == HISTOGRAM_BINS { hi } else { lo + width * j as f64 };
            w.write_record([name.to_string(), num(edge(b)), num(edge(b + 1)), c.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;

    let rmse_base = rmse_log_k(base.view(), truth.view())?;
    let rmse_net = rmse_log_k(net.view(), truth.view())?;
    ctx.summary(json!({
        "n": eval.len(),
        "fit_samples_per_model": [fit_count(&train, k, 1), fit_count(&train, k, 0)],
        "rmse_log_k": { "gaussian-mle": rmse_base, "evidence-network": rmse_net },
    }))?;
    eprintln!("RMSE(ln K): gaussian-mle {rmse_base:.6}, evidence-network {rmse_net:.6}");
    Ok(Outcome::Success)
}

fn fit_count(data: &Dataset, limit: usize, label: u8) -> usize {
    label_rows(data, label, limit).len()
}

pub fn oracle(ctx: &Context, mc_draws: Option<usize>) -> Result<Outcome> {
    let data = ctx.load_dataset(&ctx.cfg.io.eval_data)?;
    let pair = ctx.cfg.pair()?;
    check_dim("model", pair.dim(), data.dim())?;
    let (method, values, errors) = match (mc_draws, &pair) {
        (Some(draws), ModelPair::TimeSeries(spec)) => {
            let m0 = spec.with_variant(TimeSeriesVariant::M0);
            let m1 = spec.with_variant(TimeSeriesVariant::M1);
            let seed = ctx.cfg.seed;
            let x_all = data.data();
            let rows = (0..data.len())
                .into_par_iter()
                .map(|i| {
                    let x = x_all.row(i);
                    let s = seed.wrapping_add(i as u64);
                    let z1 = mc_log_evidence(&m1, x, draws, s)?;
                    let z0 = mc_log_evidence(&m0, x, draws, s)?;
                    Ok((z1.log_evidence - z0.log_evidence, z1.stderr.hypot(z0.stderr)))
                })
                .collect::<Result<Vec<(f64, f64)>>>()?;
            let (v, e): (Vec<f64>, Vec<f64>) = rows.into_iter().unzip();
            ("monte-carlo", Array1::from(v), Array1::from(e))
        }
        (Some(_), _) => return Err(invalid("--mc-draws applies only to the time-series family")),
        (None, _) => {
            let oracle = pair.oracle()?;
            let v = oracle.log_k_rows(data.data())?;
            let e = Array1::zeros(v.len());
            (oracle.method().name(), v, e)
        }
    };
    let mut w = ctx.csv_writer("oracle.csv")?;
    w.write_record(["sample_index", "log_k_true", "method", "stderr"])
        .map_err(csv_err)?;
    for i in 0..data.len() {
        w.write_record([i.to_string(), num(values[i]), method.to_string(), num(errors[i])])
            .map_err(csv_err)?;
    }
    w.flush()?;
    ctx.summary(json!({ "n": data.len(), "method": method }))?;
    Ok(Outcome::Success)
}
