//! Run configuration: a sectioned TOML file with command-line overrides.
//!
//! Every field has a default, so a config file only needs the values it
//! changes; flags passed on the command line win over the file. The resolved
//! configuration is echoed into every artifact this tool writes.

use std::path::Path;

use egpssm::kernels::KernelFamily;
use egpssm::ssm::BuildConfig;
use egpssm::train::TrainConfig;
use egpssm::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `"egpssm"` (shared GP + flows) or `"baseline"` (independent GPs).
    pub kind: String,
    pub d_x: usize,
    /// Inducing points per GP.
    pub m: usize,
    pub q_var_init: f64,
    pub r_var_init: f64,
    pub s_init_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            kind: "egpssm".into(),
            d_x: 2,
            m: 15,
            q_var_init: 0.01,
            r_var_init: 0.01,
            s_init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    /// `"squared_exponential"` or `"matern52"`.
    pub family: String,
}

impl Default for KernelSection {
    fn default() -> Self {
        KernelSection { family: "matern52".into() }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSection {
    /// SAL layers per latent dimension; `0` selects the affine flow.
    pub sal_layers: usize,
}

impl Default for FlowSection {
    fn default() -> Self {
        FlowSection { sal_layers: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: usize,
    pub learning_rate: f64,
    pub n_mc: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection { iterations: 500, learning_rate: 0.01, n_mc: 8, clip_norm: 10.0, seed: 0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// `"kink"` (synthetic) or `"csv"`.
    pub kind: String,
    pub n_seq: usize,
    pub t_len: usize,
    pub seed: u64,
    /// Discard synthetic sequences exceeding this magnitude; `0` disables.
    pub max_abs: f64,
    /// CSV files, one sequence each (kind = "csv").
    pub paths: Vec<String>,
    /// Leading fraction of each CSV sequence used for training.
    pub train_frac: f64,
    pub standardize: bool,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            kind: "kink".into(),
            n_seq: 10,
            t_len: 50,
            seed: 0,
            max_abs: 20.0,
            paths: vec![],
            train_frac: 0.5,
            standardize: true,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub kernel: KernelSection,
    pub flow: FlowSection,
    pub train: TrainSection,
    pub data: DataSection,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    pub fn kernel_family(&self) -> Result<KernelFamily> {
        self.kernel.family.parse()
    }

    pub fn build_config(&self) -> Result<BuildConfig> {
        Ok(BuildConfig {
            model: self.model.kind.clone(),
            d_x: self.model.d_x,
            m: self.model.m,
            kernel_family: self.kernel_family()?,
            sal_layers: self.flow.sal_layers,
            q_var_init: self.model.q_var_init,
            r_var_init: self.model.r_var_init,
            s_init_scale: self.model.s_init_scale,
            seed: self.train.seed,
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            iterations: self.train.iterations,
            learning_rate: self.train.learning_rate,
            n_mc: self.train.n_mc,
            clip_norm: if self.train.clip_norm > 0.0 { Some(self.train.clip_norm) } else { None },
            seed: self.train.seed,
            ..TrainConfig::default()
        }
    }
}
