//! Command-line argument definitions.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use egpssm::{Error, Result};

use crate::config::RunConfig;

#[derive(Parser)]
#[command(
    name = "egpssm",
    about = "Shared-GP state-space model: data generation, training, forecasting, complexity benchmark",
    version
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Generate synthetic kink-system sequences as CSV files.
    GenData(GenDataArgs),
    /// Fit a model from a config file; writes checkpoint, log, and report.
    Train(TrainArgs),
    /// Forecast from a checkpoint; writes predictions CSV and RMSE JSON.
    Predict(PredictArgs),
    /// Parameter counts and forward-ELBO wall-times across d_x.
    Benchmark(BenchmarkArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// Generator seed; runs are reproducible per seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long = "n-seq", default_value_t = 10)]
    pub n_seq: usize,
    /// Sequence length.
    #[arg(long, default_value_t = 50)]
    pub len: usize,
    /// Discard sequences whose observations exceed this magnitude; 0 disables.
    #[arg(long = "max-abs", default_value_t = 20.0)]
    pub max_abs: f64,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct TrainArgs {
    /// TOML config file; omitted fields take defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory for checkpoint, log, chart, and report.
    #[arg(long)]
    pub out: PathBuf,
    /// Override [train].seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override [train].iterations.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Override [train].n_mc.
    #[arg(long = "n-mc")]
    pub n_mc: Option<usize>,
    /// Override [model].kind (egpssm | baseline).
    #[arg(long)]
    pub model: Option<String>,
    /// Override [model].d_x.
    #[arg(long = "d-x")]
    pub d_x: Option<usize>,
    /// Override [model].m (inducing points).
    #[arg(long)]
    pub m: Option<usize>,
    /// Override [flow].sal_layers.
    #[arg(long = "sal-layers")]
    pub sal_layers: Option<usize>,
}

impl TrainArgs {
    pub fn apply_overrides(&self, cfg: &mut RunConfig) {
        if let Some(v) = self.seed {
            cfg.train.seed = v;
        }
        if let Some(v) = self.iterations {
            cfg.train.iterations = v;
        }
        if let Some(v) = self.n_mc {
            cfg.train.n_mc = v;
        }
        if let Some(v) = &self.model {
            cfg.model.kind = v.clone();
        }
        if let Some(v) = self.d_x {
            cfg.model.d_x = v;
        }
        if let Some(v) = self.m {
            cfg.model.m = v;
        }
        if let Some(v) = self.sal_layers {
            cfg.flow.sal_layers = v;
        }
    }
}

#[derive(Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated forecast seeds, e.g. `0,1,2`.
    #[arg(long, default_value = "0")]
    pub seeds: String,
    /// Monte-Carlo rollouts per forecast.
    #[arg(long = "n-mc", default_value_t = 30)]
    pub n_mc: usize,
    /// CSV file to split into warm-up and held-out halves.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Leading fraction of --data used for warm-up.
    #[arg(long = "train-frac", default_value_t = 0.5)]
    pub train_frac: f64,
    /// Skip standardization of --data.
    #[arg(long = "no-standardize", default_value_t = false)]
    pub no_standardize: bool,
    /// Generate a fresh synthetic test sequence with this seed instead of --data.
    #[arg(long = "kink-seed")]
    pub kink_seed: Option<u64>,
    /// Length of the synthetic test sequence.
    #[arg(long, default_value_t = 50)]
    pub len: usize,
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>> {
    let items = text
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| Error::InvalidConfig(format!("bad {what}: `{s}`"))))
        .collect::<Result<Vec<T>>>()?;
    if items.is_empty() {
        return Err(Error::InvalidConfig(format!("empty {what} list")));
    }
    Ok(items)
}

impl PredictArgs {
    pub fn seed_list(&self) -> Result<Vec<u64>> {
        parse_list(&self.seeds, "seed")
    }
}

#[derive(Args)]
pub struct BenchmarkArgs {
    /// Comma-separated latent dimensions to sweep, e.g. `2,8,32`.
    #[arg(long, default_value = "2,8,32")]
    pub dims: String,
    /// Inducing points per GP.
    #[arg(long, default_value_t = 200)]
    pub m: usize,
    /// Sequence length for the timing run.
    #[arg(long, default_value_t = 200)]
    pub t: usize,
    /// Comma-separated model kinds among egpssm, baseline (= prssm), odgpssm.
    #[arg(long, default_value = "egpssm,baseline")]
    pub models: String,
    /// Kernel hyperparameters per GP; default: variance + d_x lengthscales.
    #[arg(long)]
    pub theta: Option<usize>,
    /// Flow parameters per dimension.
    #[arg(long, default_value_t = 2)]
    pub eta: usize,
    /// Shared parameter count c.
    #[arg(long, default_value_t = 0)]
    pub c: usize,
    /// Latent GP count for the ODGPSSM formula; default d_x.
    #[arg(long = "q-latent")]
    pub q_latent: Option<usize>,
    /// Skip the wall-time sweep, emit counts only.
    #[arg(long = "skip-timing", default_value_t = false)]
    pub skip_timing: bool,
    /// Also render timing.svg.
    #[arg(long, default_value_t = false)]
    pub svg: bool,
    #[arg(long)]
    pub out: PathBuf,
}

impl BenchmarkArgs {
    pub fn dim_list(&self) -> Result<Vec<usize>> {
        parse_list(&self.dims, "dimension")
    }

    pub fn model_list(&self) -> Result<Vec<String>> {
        let models: Vec<String> = parse_list(&self.models, "model")?;
        for m in &models {
            if !matches!(m.as_str(), "egpssm" | "baseline" | "prssm" | "odgpssm") {
                return Err(Error::InvalidConfig(format!("unknown model kind: {m}")));
            }
        }
        Ok(models)
    }
}
