//! The `evnet` command-line driver.
//!
//! Exit codes: 0 success, 1 invalid config, arguments or data shapes,
//! 2 missing or unwritable paths, 3 non-finite training loss, 4 failed
//! coverage test.

mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::error::{Error, Result};
pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_PATH: i32 = 2;
pub const EXIT_NON_FINITE: i32 = 3;
pub const EXIT_CALIBRATION: i32 = 4;

#[derive(Debug, Parser)]
#[command(
    name = "evnet",
    version,
    about = "Neural Bayes factor estimation from labelled simulations"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; relative `io` paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads for ensembles and oracles.
    #[arg(long, global = true, env = "EVNET_THREADS")]
    pub threads: Option<usize>,
    #[command(flatten)]
    pub io: IoArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Path overrides for the `io` section, relative to the working directory.
#[derive(Debug, Args)]
pub struct IoArgs {
    #[arg(long, global = true)]
    pub train_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub eval_data: Option<PathBuf>,
    #[arg(long, global = true)]
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate labelled training and evaluation datasets.
    GenData,
    /// Train an ensemble on the training dataset.
    Train,
    /// Predict ln K for the evaluation dataset, or for one observed vector.
    Eval {
        /// File holding one data vector (whitespace or comma separated).
        #[arg(long)]
        observed: Option<PathBuf>,
    },
    /// Blind coverage test of the ensemble on the evaluation dataset.
    Coverage {
        /// Multiply every ln K by this factor before testing.
        #[arg(long, default_value_t = 1.0)]
        debug_scale_logits: f64,
    },
    /// Rastrigin demonstration: ensemble and oracle ln K on a 2-d grid.
    Rastrigin {
        /// Load the ensemble from the checkpoint directory instead of training.
        #[arg(long)]
        load: bool,
    },
    /// Gaussian maximum-likelihood baseline against the ensemble.
    Baseline,
    /// Exact ln K for every row of the evaluation dataset.
    Oracle {
        /// Use Monte Carlo evidences with this many draws (time series only).
        #[arg(long)]
        mc_draws: Option<usize>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval { .. } => "eval",
            Command::Coverage { .. } => "coverage",
            Command::Rastrigin { .. } => "rastrigin",
            Command::Baseline => "baseline",
            Command::Oracle { .. } => "oracle",
        }
    }
}

/// Outcome of a subcommand that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    CalibrationFailed,
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(_) => EXIT_PATH,
        Error::NonFiniteLoss { .. } => EXIT_NON_FINITE,
        _ => EXIT_INVALID,
    }
}

/// Parses `args` (including the program name), runs the command, and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(cli) {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::CalibrationFailed) => EXIT_CALIBRATION,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(cli: Cli) -> Result<Outcome> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be >= 1".into()));
        }
        // The global pool can be set once per process; later calls keep it.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let cfg = resolve_config(&cli)?;
    let ctx = commands::Context::new(cli.out.clone(), cfg, cli.command.name())?;
    match &cli.command {
        Command::GenData => commands::gen_data(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Eval { observed } => commands::eval(&ctx, observed.as_deref()),
        Command::Coverage { debug_scale_logits } => commands::coverage(&ctx, *debug_scale_logits),
        Command::Rastrigin { load } => commands::rastrigin(&ctx, *load),
        Command::Baseline => commands::baseline(&ctx),
        Command::Oracle { mc_draws } => commands::oracle(&ctx, *mc_draws),
    }
}

fn absolute(path: &Path) -> Result<PathBuf> {
    Ok(std::path::absolute(path)?)
}

fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
            RunConfig::from_toml(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg = cfg.with_seed(seed);
    }
    if let Some(p) = &cli.io.train_data {
        cfg.io.train_data = absolute(p)?;
    }
    if let Some(p) = &cli.io.eval_data {
        cfg.io.eval_data = absolute(p)?;
    }
    if let Some(p) = &cli.io.checkpoints {
        cfg.io.checkpoints = absolute(p)?;
    }
    Ok(cfg)
}
