//! Run configuration files.
//!
//! A run config is TOML with one table per concern (`model`, `loss`, `train`,
//! `ensemble`, `data`, `eval`, `io`) and a top-level `seed`. Unknown keys are
//! errors that name the full dotted key.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::losses::LossSpec;
use crate::models::timeseries::{TimeSeriesModelSpec, TimeSeriesVariant, DEFAULT_T_STEP};
use crate::models::ModelPair;
use crate::training::TrainConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    TimeSeries,
    Rastrigin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub family: Family,
    /// Data dimension (`N` for time series, `n` for Rastrigin).
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    /// Spacing of a uniform time grid starting at 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_step: Option<f64>,
    /// Explicit time points; overrides `t_step`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
}

impl ModelConfig {
    pub fn pair(&self) -> Result<ModelPair> {
        let cfg_err = |e: Error| Error::Config(format!("model: {e}"));
        match self.family {
            Family::TimeSeries => {
                if self.noise_var.is_some() {
                    return Err(Error::Config(
                        "model.noise_var applies only to the rastrigin family".into(),
                    ));
                }
                let spec = match &self.t_grid {
                    Some(grid) => {
                        if grid.len() != self.n {
                            return Err(Error::Config(format!(
                                "model.t_grid has {} points but model.n = {}",
                                grid.len(),
                                self.n
                            )));
                        }
                        TimeSeriesModelSpec::with_grid(grid.clone(), TimeSeriesVariant::M1)
                    }
                    None => TimeSeriesModelSpec::with_step(
                        self.n,
                        self.t_step.unwrap_or(DEFAULT_T_STEP),
                        TimeSeriesVariant::M1,
                    ),
                }
                .map_err(cfg_err)?;
                Ok(ModelPair::TimeSeries(spec))
            }
            Family::Rastrigin => {
                if self.t_step.is_some() || self.t_grid.is_some() {
                    return Err(Error::Config(
                        "model.t_step and model.t_grid apply only to time series".into(),
                    ));
                }
                let noise_var = self
                    .noise_var
                    .ok_or_else(|| Error::Config("model.noise_var is required for the rastrigin family".into()))?;
                ModelPair::rastrigin(self.n, noise_var).map_err(cfg_err)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig { members: 4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Training rows per model.
    pub n_per_model: usize,
    /// Held-out rows per model.
    pub eval_n_per_model: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            n_per_model: 100_000,
            eval_n_per_model: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub bins: usize,
    pub min_count: usize,
    /// Rows per model used to fit each Gaussian baseline.
    pub baseline_fit_samples: usize,
    /// Points per axis of the Rastrigin grid.
    pub grid: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bins: 10,
            min_count: 20,
            baseline_fit_samples: 100_000,
            grid: 41,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IoConfig {
    pub train_data: PathBuf,
    pub eval_data: PathBuf,
    pub checkpoints: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            train_data: "train.evds".into(),
            eval_data: "eval.evds".into(),
            checkpoints: "ensemble".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default)]
    pub loss: LossSpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub io: IoConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            model: Some(ModelConfig {
                family: Family::TimeSeries,
                n: 20,
                noise_var: None,
                t_step: None,
                t_grid: None,
            }),
            loss: LossSpec::default(),
            train: TrainConfig::default(),
            ensemble: EnsembleConfig::default(),
            data: DataConfig::default(),
            eval: EvalConfig::default(),
            io: IoConfig::default(),
        }
    }
}

const SCHEMA: &[(&str, &[&str])] = &[
    ("model", &["family", "n", "noise_var", "t_step", "t_grid"]),
    ("loss", &["kind", "alpha"]),
    (
        "train",
        &[
            "batch_size",
            "max_epochs",
            "patience",
            "val_fraction",
            "learning_rate",
            "decay",
            "augment",
            "seed",
        ],
    ),
    ("ensemble", &["members"]),
    ("data", &["n_per_model", "eval_n_per_model"]),
    ("eval", &["bins", "min_count", "baseline_fit_samples", "grid"]),
    ("io", &["train_data", "eval_data", "checkpoints"]),
];

fn check_keys(table: &toml::Table) -> Result<()> {
    for (key, value) in table {
        if key == "seed" {
            continue;
        }
        let Some((_, fields)) = SCHEMA.iter().find(|(name, _)| name == key) else {
            return Err(Error::Config(format!("unknown key `{key}`")));
        };
        let Some(inner) = value.as_table() else {
            return Err(Error::Config(format!("`{key}` must be a table")));
        };
        if let Some(bad) = inner.keys().find(|k| !fields.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key `{key}.{bad}`")));
        }
    }
    Ok(())
}

impl RunConfig {
    /// Parses a config, rejecting unknown keys. `train.seed` follows `seed`
    /// unless given explicitly.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        check_keys(&table)?;
        let explicit_train_seed = table
            .get("train")
            .and_then(|t| t.as_table())
            .is_some_and(|t| t.contains_key("seed"));
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if !explicit_train_seed {
            cfg.train.seed = cfg.seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Replaces the run seed, and the training seed with it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.train.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        if let Some(m) = &self.model {
            m.pair()?;
        }
        if self.ensemble.members == 0 {
            return Err(Error::Config("ensemble.members must be >= 1".into()));
        }
        if self.eval.bins < 2 {
            return Err(Error::Config("eval.bins must be >= 2".into()));
        }
        if self.data.n_per_model == 0 || self.data.eval_n_per_model == 0 {
            return Err(Error::Config(
                "data.n_per_model and data.eval_n_per_model must be >= 1".into(),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// SHA-256 of the resolved TOML, as lowercase hex.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn pair(&self) -> Result<ModelPair> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::Config("this command needs a [model] section".into()))?
            .pair()
    }
}
