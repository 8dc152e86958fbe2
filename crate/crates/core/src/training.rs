//! Mini-batch training with early stopping, and ensembles of networks.
//!
//! Each epoch shuffles the training split, runs every mini-batch through a
//! training-mode forward pass, averages the loss over the batch, backpropagates
//! and takes one Adam step. The validation loss is measured in inference mode
//! after every epoch, and the parameters from the best validation epoch are
//! returned.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use crate::data::{augment_sign_flip, generate_training_set, Dataset};
use crate::error::{invalid, Error, Result};
use crate::losses::{decode_raw, loss_raw, LossSpec, ModelPriorRatio};
use crate::nn::{Adam, Mode, Network};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,
    pub learning_rate: f64,
    pub decay: f64,
    /// Train on each mini-batch together with its sign flip.
    pub augment: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_epochs: 200,
            patience: 10,
            val_fraction: 0.1,
            learning_rate: Adam::DEFAULT_LR,
            decay: Adam::DEFAULT_DECAY,
            augment: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid(format!(
                "train.batch_size must be >= 2, got {}",
                self.batch_size
            )));
        }
        if self.max_epochs == 0 {
            return Err(invalid("train.max_epochs must be >= 1"));
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return Err(invalid(format!(
                "train.patience must lie in 1..={}, got {}",
                self.max_epochs, self.patience
            )));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(invalid(format!(
                "train.val_fraction must lie in (0, 1), got {}",
                self.val_fraction
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("train.learning_rate must be positive"));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(invalid("train.decay must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Validation loss of the network before the first update.
    pub initial_val_loss: f64,
}

impl TrainingHistory {
    pub fn best_val_loss(&self) -> f64 {
        self.epochs[self.best_epoch].val_loss
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.epochs {
            out.serialize(r).map_err(csv_error)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(fs::File::create(path)?)
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// Train/validation row indices, stratified by label.
pub fn stratified_split(labels: &[u8], val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut rng = rng::stream(seed, rng::STREAM_SPLIT);
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_val = (idx.len() as f64 * val_fraction).round() as usize;
        val.extend_from_slice(&idx[..n_val]);
        train.extend_from_slice(&idx[n_val..]);
    }
    if train.len() < 2 || val.len() < 2 {
        return Err(invalid(format!(
            "{} samples leave {} training and {} validation rows; need >= 2 each",
            labels.len(),
            train.len(),
            val.len()
        )));
    }
    train.sort_unstable();
    val.sort_unstable();
    Ok((train, val))
}

/// Per-feature `(shift, scale)` mapping the data to zero mean and unit
/// variance. With `symmetric`, the shift is zero and the scale uses the
/// second moment, so the map commutes with `x ↦ −x`.
pub fn standardization(data: ArrayView2<f64>, symmetric: bool) -> (Array1<f64>, Array1<f64>) {
    let n = data.nrows().max(1) as f64;
    let shift = if symmetric {
        Array1::zeros(data.ncols())
    } else {
        data.mean_axis(Axis(0)).unwrap_or_else(|| Array1::zeros(data.ncols()))
    };
    let spread = (&data - &shift).mapv(|v| v * v).sum_axis(Axis(0)) / n;
    let scale = spread.mapv(|v| if v > 0.0 && v.is_finite() { 1.0 / v.sqrt() } else { 1.0 });
    (shift, scale)
}

/// Mean loss of the inference-mode network over `data`.
pub fn mean_loss(net: &Network, loss: &LossSpec, data: ArrayView2<f64>, labels: &[u8]) -> Result<f64> {
    let out = net.predict(data)?;
    let mut total = 0.0;
    for (&raw, &m) in out.iter().zip(labels) {
        total += loss_raw(loss, raw, m)?.value;
    }
    Ok(total / labels.len() as f64)
}

fn non_finite(epoch: usize, batch: usize) -> Error {
    Error::NonFiniteLoss {
        epoch,
        batch,
        member: None,
    }
}

/// Trains `net` in place and returns the best-validation parameters.
pub fn train(
    mut net: Network,
    dataset: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
) -> Result<(Network, TrainingHistory)> {
    config.validate()?;
    if dataset.dim() != net.input_dim() {
        return Err(invalid(format!(
            "dataset has {} features, network expects {}",
            dataset.dim(),
            net.input_dim()
        )));
    }
    let (train_idx, val_idx) = stratified_split(dataset.labels(), config.val_fraction, config.seed)?;
    let train_set = dataset.select(&train_idx);
    let val_set = dataset.select(&val_idx);
    let (shift, scale) = standardization(train_set.data(), config.augment);
    net.set_input_standardization(shift, scale)?;

    let mut opt = Adam::new(&net, config.learning_rate, config.decay)?;
    let mut shuffle = rng::stream(config.seed, rng::STREAM_SHUFFLE);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let initial_val_loss = mean_loss(&net, loss, val_set.data(), val_set.labels())?;
    let mut history = TrainingHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        initial_val_loss,
    };
    let mut best = net.clone();
    let mut best_val = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut count = 0usize;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let x = train_set.data().select(Axis(0), chunk);
            let m: Vec<u8> = chunk.iter().map(|&i| train_set.labels()[i]).collect();
            let (x, m) = if config.augment {
                augment_sign_flip(x.view(), &m)
            } else {
                (x, m)
            };
            let (out, trace) = net.forward(x.view(), Mode::Training)?;
            let mut grads = Vec::with_capacity(m.len());
            let mut batch_loss = 0.0;
            for (&raw, &label) in out.iter().zip(&m) {
                let r = loss_raw(loss, raw, label).map_err(|_| non_finite(epoch, b))?;
                batch_loss += r.value;
                grads.push(r.grad);
            }
            if !batch_loss.is_finite() {
                return Err(non_finite(epoch, b));
            }
            let g = net.backward(&trace, &grads)?;
            opt.step(&mut net, &g, epoch).map_err(|e| match e {
                Error::Numeric(_) => non_finite(epoch, b),
                other => other,
            })?;
            sum += batch_loss;
            count += m.len();
        }
        let val_loss = mean_loss(&net, loss, val_set.data(), val_set.labels()).map_err(|_| non_finite(epoch, 0))?;
        if !val_loss.is_finite() {
            return Err(non_finite(epoch, 0));
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: sum / count.max(1) as f64,
            val_loss,
            lr: opt.learning_rate(epoch),
        });
        if val_loss < best_val {
            best_val = val_loss;
            best = net.clone();
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    Ok((best, history))
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMember {
    pub net: Network,
    pub history: TrainingHistory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub members: Vec<EnsembleMember>,
    pub loss: LossSpec,
    pub prior: ModelPriorRatio,
}

/// Trains `k` networks with seeds `seed, seed + 1, …`, in parallel.
pub fn train_ensemble(
    k: usize,
    dataset: &Dataset,
    loss: &LossSpec,
    config: &TrainConfig,
    prior: Option<ModelPriorRatio>,
) -> Result<Ensemble> {
    if k == 0 {
        return Err(invalid("ensemble size must be at least 1"));
    }
    config.validate()?;
    let prior = dataset.prior_ratio(prior)?;
    let members = (0..k)
        .into_par_iter()
        .map(|i| {
            let cfg = TrainConfig {
                seed: config.seed.wrapping_add(i as u64),
                ..config.clone()
            };
            let net = Network::new(dataset.dim(), cfg.seed)?;
            let (net, history) = train(net, dataset, loss, &cfg).map_err(|e| match e {
                Error::NonFiniteLoss { epoch, batch, .. } => Error::NonFiniteLoss {
                    epoch,
                    batch,
                    member: Some(i),
                },
                other => other,
            })?;
            Ok(EnsembleMember { net, history })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Ensemble {
        members,
        loss: *loss,
        prior,
    })
}

#[derive(Debug, Serialize, Deserialize)]
struct EnsembleManifest {
    members: usize,
    loss: LossSpec,
    log_prior_ratio: f64,
}

fn member_path(dir: &Path, i: usize) -> PathBuf {
    dir.join(format!("member_{i}.evnn"))
}

impl Ensemble {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.members[0].net.input_dim()
    }

    /// Decoded `ln K` of every member: one row per member.
    pub fn member_log_k(&self, batch: ArrayView2<f64>) -> Result<Array2<f64>> {
        let mut out = Array2::zeros((self.len(), batch.nrows()));
        for (mut row, m) in out.axis_iter_mut(Axis(0)).zip(&self.members) {
            let raw = m.net.predict(batch)?;
            row.assign(&raw.mapv(|f| decode_raw(&self.loss, f, self.prior)));
        }
        Ok(out)
    }

    /// Mean decoded `ln K` per row and its jackknife standard error.
    pub fn log_k(&self, batch: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        Ok(jackknife_mean(self.member_log_k(batch)?.view()))
    }

    /// `ln K` decoded from the member-averaged raw output.
    pub fn log_k_from_mean_output(&self, batch: ArrayView2<f64>) -> Result<Array1<f64>> {
        let mut raws = Array2::zeros((self.len(), batch.nrows()));
        for (mut row, m) in raws.axis_iter_mut(Axis(0)).zip(&self.members) {
            row.assign(&m.net.predict(batch)?);
        }
        let (mean, _) = jackknife_mean(raws.view());
        Ok(mean.mapv(|f| decode_raw(&self.loss, f, self.prior)))
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        for (i, m) in self.members.iter().enumerate() {
            m.net.save(&member_path(dir, i))?;
            m.history.save_csv(&dir.join(format!("history_{i}.csv")))?;
        }
        let manifest = EnsembleManifest {
            members: self.len(),
            loss: self.loss,
            log_prior_ratio: self.prior.log_ratio(),
        };
        let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(dir.join("ensemble.json"), text)?;
        Ok(())
    }

    /// Loads checkpoints written by [`Ensemble::save_dir`]. Histories are not
    /// restored.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join("ensemble.json"))?;
        let manifest: EnsembleManifest = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if manifest.members == 0 {
            return Err(Error::Format("ensemble manifest lists no members".into()));
        }
        let members = (0..manifest.members)
            .map(|i| {
                Ok(EnsembleMember {
                    net: Network::load(&member_path(dir, i))?,
                    history: TrainingHistory::default(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if members.iter().any(|m| m.net.input_dim() != members[0].net.input_dim()) {
            return Err(Error::Format("ensemble members disagree on input dimension".into()));
        }
        Ok(Ensemble {
            members,
            loss: manifest.loss,
            prior: ModelPriorRatio::new(manifest.log_prior_ratio)?,
        })
    }
}

/// Column means of `values` (members × rows) and the leave-one-out jackknife
/// standard error of each mean. Members are summed in sorted order, so the
/// result does not depend on member order.
pub fn jackknife_mean(values: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let k = values.nrows();
    let mut mean = Array1::zeros(values.ncols());
    let mut err = Array1::zeros(values.ncols());
    let mut col = Vec::with_capacity(k);
    for (j, column) in values.axis_iter(Axis(1)).enumerate() {
        col.clear();
        col.extend(column.iter().copied());
        col.sort_by(f64::total_cmp);
        let m = col.iter().sum::<f64>() / k as f64;
        mean[j] = m;
        if k > 1 {
            let kf = k as f64;
            let ss: f64 = col
                .iter()
                .map(|v| {
                    let loo = (kf * m - v) / (kf - 1.0);
                    (loo - m).powi(2)
                })
                .sum();
            err[j] = ((kf - 1.0) / kf * ss).sqrt();
        }
    }
    (mean, err)
}

/// Per-row mean `ln K` and jackknife error over the ensemble members.
pub fn ensemble_log_k(ensemble: &Ensemble, batch: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
    ensemble.log_k(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::losses::LossKind;
    use crate::models::ModelPair;
    use ndarray::array;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 1,
                ..Default::default()
            },
            TrainConfig {
                patience: 300,
                ..Default::default()
            },
            TrainConfig {
                val_fraction: 1.0,
                ..Default::default()
            },
            TrainConfig {
                decay: 0.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn config_from_toml_rejects_unknown_keys() {
        let c: TrainConfig = toml::from_str("batch_size = 64\naugment = true").unwrap();
        assert_eq!(c.batch_size, 64);
        assert!(c.augment);
        assert!(toml::from_str::<TrainConfig>("batch_sise = 64").is_err());
    }

    #[test]
    fn split_is_stratified() {
        let labels: Vec<u8> = (0..100).map(|i| (i % 2) as u8).collect();
        let (tr, va) = stratified_split(&labels, 0.1, 4).unwrap();
        assert_eq!(tr.len() + va.len(), 100);
        assert_eq!(va.iter().filter(|&&i| labels[i] == 1).count(), 5);
        assert!(stratified_split(&labels[..4], 0.1, 4).is_err());
    }

    #[test]
    fn symmetric_standardization_commutes_with_sign_flip() {
        let x = array![[1.0, 10.0], [3.0, -10.0], [-2.0, 30.0]];
        let (shift, scale) = standardization(x.view(), true);
        assert_eq!(shift, array![0.0, 0.0]);
        assert!((scale[0] - (3.0 / 14.0f64).sqrt()).abs() < 1e-15);
        let (shift, scale) = standardization(array![[2.0], [2.0]].view(), false);
        assert_eq!((shift[0], scale[0]), (2.0, 1.0));
    }

    #[test]
    fn jackknife_two_members() {
        let (m, e) = jackknife_mean(array![[1.0, 4.0], [3.0, 4.0]].view());
        assert_eq!(m, array![2.0, 4.0]);
        assert!((e[0] - 1.0).abs() < 1e-15);
        assert_eq!(e[1], 0.0);
        let (m1, e1) = jackknife_mean(array![[0.3, -2.0]].view());
        assert_eq!(m1, array![0.3, -2.0]);
        assert_eq!(e1, array![0.0, 0.0]);
    }

    #[test]
    fn jackknife_is_order_free() {
        let a = array![[0.1, 5.0], [0.7, -1.0], [1e-9, 3.3], [2.2, 0.0]];
        let b = a.select(Axis(0), &[2, 0, 3, 1]);
        assert_eq!(jackknife_mean(a.view()), jackknife_mean(b.view()));
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_epochs: 500,
            patience: 500,
            val_fraction: 0.2,
            learning_rate: 1e-3,
            decay: 1.0,
            augment: false,
            seed: 1,
        }
    }

    #[test]
    fn fits_a_tiny_dataset() {
        let pair = ModelPair::time_series(5).unwrap();
        let d = generate_training_set(&pair, 16, 2).unwrap();
        let loss = LossSpec::lpop_exponential(2.0).unwrap();
        let cfg = TrainConfig {
            batch_size: 32,
            learning_rate: 1e-2,
            ..tiny_config()
        };
        let (_, h) = train(Network::new(5, 1).unwrap(), &d, &loss, &cfg).unwrap();
        let first = h.epochs[0].train_loss;
        let last = h.epochs.last().unwrap().train_loss;
        assert!(last < 0.5 * first, "{first} -> {last}");
        let best = h.epochs.iter().map(|r| r.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(h.best_val_loss(), best);
    }

    #[test]
    fn training_is_deterministic() {
        let pair = ModelPair::time_series(4).unwrap();
        let d = generate_training_set(&pair, 64, 5).unwrap();
        let loss = LossSpec::new(LossKind::Exponential, 2.0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 3,
            patience: 3,
            augment: true,
            ..tiny_config()
        };
        let a = train(Network::new(4, 3).unwrap(), &d, &loss, &cfg).unwrap();
        let b = train(Network::new(4, 3).unwrap(), &d, &loss, &cfg).unwrap();
        assert_eq!(a.0.to_bytes(), b.0.to_bytes());
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn rejects_dimension_mismatch() {
        let d = Dataset::new(Array2::zeros((10, 3)), vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1]).unwrap();
        let loss = LossSpec::lpop_exponential(2.0).unwrap();
        assert!(train(Network::new(2, 0).unwrap(), &d, &loss, &TrainConfig::default()).is_err());
    }

    #[test]
    fn ensemble_members_differ_and_average_exactly() {
        let pair = ModelPair::time_series(3).unwrap();
        let d = generate_training_set(&pair, 40, 6).unwrap();
        let loss = LossSpec::lpop_exponential(2.0).unwrap();
        let cfg = TrainConfig {
            max_epochs: 2,
            patience: 2,
            ..tiny_config()
        };
        let e = train_ensemble(3, &d, &loss, &cfg, None).unwrap();
        assert_eq!(e.len(), 3);
        assert_ne!(e.members[0].net, e.members[1].net);
        let x = d.data().slice(ndarray::s![..5, ..]).to_owned();
        let per = e.member_log_k(x.view()).unwrap();
        let (mean, _) = e.log_k(x.view()).unwrap();
        for j in 0..5 {
            let mut col: Vec<f64> = per.column(j).to_vec();
            col.sort_by(f64::total_cmp);
            assert_eq!(mean[j], col.iter().sum::<f64>() / 3.0);
        }
        let one = train_ensemble(1, &d, &loss, &cfg, None).unwrap();
        let (_, err) = one.log_k(x.view()).unwrap();
        assert!(err.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ensemble_directory_round_trip() {
        let pair = ModelPair::time_series(3).unwrap();
        let d = generate_training_set(&pair, 30, 7).unwrap();
        let loss = LossSpec::lpop_exponential(1.5).unwrap();
        let cfg = TrainConfig {
            max_epochs: 1,
            patience: 1,
            ..tiny_config()
        };
        let e = train_ensemble(2, &d, &loss, &cfg, None).unwrap();
        let dir = tempfile::tempdir().unwrap();
        e.save_dir(dir.path()).unwrap();
        let back = Ensemble::load_dir(dir.path()).unwrap();
        assert_eq!(back.loss, e.loss);
        for (a, b) in back.members.iter().zip(&e.members) {
            assert_eq!(a.net, b.net);
        }
        let csv = fs::read_to_string(dir.path().join("history_0.csv")).unwrap();
        assert!(csv.starts_with("epoch,train_loss,val_loss,lr\n"));
    }
}
