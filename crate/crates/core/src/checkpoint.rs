//! Model checkpoints: TOML round-tripping of every trainable parameter.
//!
//! The file carries a format version and the full model structure, so a
//! checkpoint can be reloaded without the configuration that produced it.
//! Floats are written in shortest round-trip form; save followed by load
//! reproduces the model bit for bit.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::flows::{FlowKind, FlowStack, SalLayer};
use crate::kernels::{KernelFamily, KernelParams};
use crate::numerics::{DiagGaussian, Mat};
use crate::sparse_gp::InducingState;
use crate::ssm::{BaselineModel, EgpssmModel, GaussParam, Model, SsmParams};
use crate::Result;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct MatSer {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl MatSer {
    fn from(m: &Mat<f64>) -> Self {
        MatSer { rows: m.rows, cols: m.cols, data: m.data.clone() }
    }

    fn into_mat(self) -> Result<Mat<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(Error::InvalidSpec(format!(
                "matrix data length {} does not match {}x{}",
                self.data.len(),
                self.rows,
                self.cols
            )));
        }
        Ok(Mat { rows: self.rows, cols: self.cols, data: self.data })
    }
}

#[derive(Serialize, Deserialize)]
struct KernelSer {
    family: KernelFamily,
    log_variance: f64,
    log_lengthscales: Vec<f64>,
}

impl KernelSer {
    fn from(k: &KernelParams<f64>) -> Self {
        KernelSer {
            family: k.family,
            log_variance: k.log_variance,
            log_lengthscales: k.log_lengthscales.clone(),
        }
    }

    fn into_params(self) -> KernelParams<f64> {
        KernelParams {
            family: self.family,
            log_variance: self.log_variance,
            log_lengthscales: self.log_lengthscales,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GpSer {
    z: MatSer,
    m_vec: Vec<f64>,
    s_factor_log: Vec<f64>,
}

impl GpSer {
    fn from(gp: &InducingState<f64>) -> Self {
        GpSer { z: MatSer::from(&gp.z), m_vec: gp.m_vec.clone(), s_factor_log: gp.s_factor_log.clone() }
    }

    fn into_state(self) -> Result<InducingState<f64>> {
        let z = self.z.into_mat()?;
        let m = self.m_vec.len();
        if z.rows != m || self.s_factor_log.len() != m * (m + 1) / 2 {
            return Err(Error::InvalidSpec("inducing-state fields disagree on m".into()));
        }
        Ok(InducingState { z, m_vec: self.m_vec, s_factor_log: self.s_factor_log })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum FlowSer {
    /// One `[log_alpha, beta, gamma, log_phi]` entry per layer.
    Sal { layers: Vec<[f64; 4]> },
    Linear { alpha: f64, beta: f64 },
}

impl FlowSer {
    fn from(f: &FlowStack<f64>) -> Self {
        match &f.kind {
            FlowKind::Sal(layers) => FlowSer::Sal {
                layers: layers.iter().map(|l| [l.log_alpha, l.beta, l.gamma, l.log_phi]).collect(),
            },
            FlowKind::Linear { alpha, beta } => FlowSer::Linear { alpha: *alpha, beta: *beta },
        }
    }

    fn into_stack(self) -> Result<FlowStack<f64>> {
        match self {
            FlowSer::Sal { layers } => {
                if layers.is_empty() {
                    return Err(Error::InvalidSpec("sal flow needs at least one layer".into()));
                }
                Ok(FlowStack {
                    kind: FlowKind::Sal(
                        layers
                            .into_iter()
                            .map(|[log_alpha, beta, gamma, log_phi]| SalLayer {
                                log_alpha,
                                beta,
                                gamma,
                                log_phi,
                            })
                            .collect(),
                    ),
                })
            }
            FlowSer::Linear { alpha, beta } => Ok(FlowStack { kind: FlowKind::Linear { alpha, beta } }),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct GaussSer {
    mean: Vec<f64>,
    log_var: Vec<f64>,
}

impl GaussSer {
    fn from(g: &GaussParam<f64>) -> Self {
        GaussSer { mean: g.mean.clone(), log_var: g.log_var.clone() }
    }

    fn into_param(self) -> Result<GaussParam<f64>> {
        if self.mean.len() != self.log_var.len() {
            return Err(Error::InvalidSpec("q(x0) mean and log_var lengths differ".into()));
        }
        Ok(GaussParam { mean: self.mean, log_var: self.log_var })
    }
}

#[derive(Serialize, Deserialize)]
struct SsmSer {
    d_x: usize,
    d_y: usize,
    d_c: usize,
    c_matrix: MatSer,
    q_logvar: Vec<f64>,
    r_logvar: Vec<f64>,
    x0_prior_mean: Vec<f64>,
    x0_prior_var: Vec<f64>,
}

impl SsmSer {
    fn from(s: &SsmParams<f64>) -> Self {
        SsmSer {
            d_x: s.d_x,
            d_y: s.d_y,
            d_c: s.d_c,
            c_matrix: MatSer::from(&s.c_matrix),
            q_logvar: s.q_logvar.clone(),
            r_logvar: s.r_logvar.clone(),
            x0_prior_mean: s.x0_prior.mean.clone(),
            x0_prior_var: s.x0_prior.var.clone(),
        }
    }

    fn into_params(self) -> Result<SsmParams<f64>> {
        let c_matrix = self.c_matrix.into_mat()?;
        if c_matrix.rows != self.d_y
            || c_matrix.cols != self.d_x
            || self.q_logvar.len() != self.d_x
            || self.r_logvar.len() != self.d_y
            || self.x0_prior_mean.len() != self.d_x
            || self.x0_prior_var.len() != self.d_x
        {
            return Err(Error::InvalidSpec("state-space dimensions disagree".into()));
        }
        Ok(SsmParams {
            d_x: self.d_x,
            d_y: self.d_y,
            d_c: self.d_c,
            c_matrix,
            q_logvar: self.q_logvar,
            r_logvar: self.r_logvar,
            x0_prior: DiagGaussian { mean: self.x0_prior_mean, var: self.x0_prior_var },
        })
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    kind: String,
    ssm: SsmSer,
    kernels: Vec<KernelSer>,
    gps: Vec<GpSer>,
    flows: Vec<FlowSer>,
    x0_var: Vec<GaussSer>,
}

/// Serialize a model to a TOML string.
pub fn to_toml(model: &Model<f64>) -> Result<String> {
    let ckpt = match model {
        Model::Egpssm(m) => Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "egpssm".into(),
            ssm: SsmSer::from(&m.ssm),
            kernels: vec![KernelSer::from(&m.kernel)],
            gps: vec![GpSer::from(&m.gp)],
            flows: m.flows.iter().map(FlowSer::from).collect(),
            x0_var: m.x0_var.iter().map(GaussSer::from).collect(),
        },
        Model::Baseline(m) => Checkpoint {
            version: CHECKPOINT_VERSION,
            kind: "baseline".into(),
            ssm: SsmSer::from(&m.ssm),
            kernels: m.kernels.iter().map(KernelSer::from).collect(),
            gps: m.gps.iter().map(GpSer::from).collect(),
            flows: vec![],
            x0_var: m.x0_var.iter().map(GaussSer::from).collect(),
        },
    };
    toml::to_string(&ckpt).map_err(|e| Error::Io(format!("serialize checkpoint: {e}")))
}

/// Parse a model from a TOML string, validating version and dimensions.
pub fn from_toml(text: &str) -> Result<Model<f64>> {
    let ckpt: Checkpoint =
        toml::from_str(text).map_err(|e| Error::InvalidSpec(format!("checkpoint parse: {e}")))?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::InvalidSpec(format!(
            "checkpoint version {} not supported (expected {})",
            ckpt.version, CHECKPOINT_VERSION
        )));
    }
    let ssm = ckpt.ssm.into_params()?;
    let x0_var = ckpt.x0_var.into_iter().map(GaussSer::into_param).collect::<Result<Vec<_>>>()?;
    for g in &x0_var {
        if g.dim() != ssm.d_x {
            return Err(Error::InvalidSpec("q(x0) dimension disagrees with d_x".into()));
        }
    }
    let gp_input_dim = ssm.d_x + ssm.d_c;
    let check_gp = |gp: &InducingState<f64>, kp: &KernelParams<f64>| -> Result<()> {
        if gp.z.cols != gp_input_dim || kp.input_dim() != gp_input_dim {
            return Err(Error::InvalidSpec("GP input dimension disagrees with d_x + d_c".into()));
        }
        Ok(())
    };
    match ckpt.kind.as_str() {
        "egpssm" => {
            if ckpt.kernels.len() != 1 || ckpt.gps.len() != 1 {
                return Err(Error::InvalidSpec("shared-GP checkpoint needs exactly one GP".into()));
            }
            if ckpt.flows.len() != ssm.d_x {
                return Err(Error::InvalidSpec("need one flow per latent dimension".into()));
            }
            let kernel = ckpt.kernels.into_iter().next().unwrap().into_params();
            let gp = ckpt.gps.into_iter().next().unwrap().into_state()?;
            check_gp(&gp, &kernel)?;
            let flows =
                ckpt.flows.into_iter().map(FlowSer::into_stack).collect::<Result<Vec<_>>>()?;
            Ok(Model::Egpssm(EgpssmModel { ssm, kernel, gp, flows, x0_var }))
        }
        "baseline" => {
            if ckpt.kernels.len() != ssm.d_x || ckpt.gps.len() != ssm.d_x {
                return Err(Error::InvalidSpec("baseline checkpoint needs one GP per dimension".into()));
            }
            let kernels: Vec<_> = ckpt.kernels.into_iter().map(KernelSer::into_params).collect();
            let gps = ckpt.gps.into_iter().map(GpSer::into_state).collect::<Result<Vec<_>>>()?;
            for (gp, kp) in gps.iter().zip(&kernels) {
                check_gp(gp, kp)?;
            }
            Ok(Model::Baseline(BaselineModel { ssm, kernels, gps, x0_var }))
        }
        other => Err(Error::InvalidSpec(format!("unknown checkpoint kind: {other}"))),
    }
}

pub fn save(model: &Model<f64>, path: &Path) -> Result<()> {
    std::fs::write(path, to_toml(model)?).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}

pub fn load(path: &Path) -> Result<Model<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    from_toml(&text)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::pack;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sample_models() -> Vec<Model<f64>> {
        let d_x = 2;
        let m = 3;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut z = || {
            Mat::from_rows(
                (0..m).map(|_| (0..d_x).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect(),
            )
        };
        let egpssm = Model::Egpssm(EgpssmModel {
            ssm: SsmParams::new(d_x, d_x, 0, 0.01, 0.1),
            kernel: KernelParams::new(KernelFamily::Matern52, 1.3, &[0.7, 1.9]),
            gp: InducingState::<f64>::init(z(), 0.3),
            flows: vec![
                FlowStack::sal(vec![SalLayer::new(1.2, -0.3, 0.4, 0.8), SalLayer::identity()]),
                FlowStack::linear(-0.7, 0.25),
            ],
            x0_var: vec![GaussParam::new(vec![0.1, -0.4], vec![0.9, 1.1])],
        });
        let baseline = Model::Baseline(BaselineModel {
            ssm: SsmParams::new(d_x, d_x, 0, 0.02, 0.05),
            kernels: (0..d_x)
                .map(|_| KernelParams::new(KernelFamily::SquaredExponential, 0.9, &[1.0, 1.2]))
                .collect(),
            gps: (0..d_x).map(|_| InducingState::<f64>::init(z(), 0.5)).collect(),
            x0_var: vec![GaussParam::new(vec![0.0, 0.0], vec![1.0, 1.0])],
        });
        vec![egpssm, baseline]
    }

    #[test]
    fn toml_round_trip_is_bitwise() {
        for model in sample_models() {
            let text = to_toml(&model).unwrap();
            let back = from_toml(&text).unwrap();
            assert_eq!(pack(&back), pack(&model));
            assert_eq!(back.kind_name(), model.kind_name());
            // a second serialize is byte-identical
            assert_eq!(to_toml(&back).unwrap(), text);
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = std::env::temp_dir().join("egpssm_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        for (i, model) in sample_models().into_iter().enumerate() {
            let path = dir.join(format!("model_{i}.toml"));
            save(&model, &path).unwrap();
            let back = load(&path).unwrap();
            assert_eq!(pack(&back), pack(&model));
        }
    }

    #[test]
    fn version_is_checked() {
        let model = sample_models().remove(0);
        let text = to_toml(&model).unwrap();
        let bumped = text.replacen("version = 1", "version = 99", 1);
        match from_toml(&bumped) {
            Err(Error::InvalidSpec(msg)) => assert!(msg.contains("version")),
            other => panic!("expected InvalidSpec, got {other:?}"),
        }
    }

    #[test]
    fn corrupted_dimensions_rejected() {
        let model = sample_models().remove(0);
        let text = to_toml(&model).unwrap();
        // drop one flow: d_x = 2 but only one flow remains
        let cut = {
            let idx = text.find("[[flows]]").unwrap();
            let rest = &text[idx + 1..];
            let second = idx + 1 + rest.find("[[flows]]").unwrap();
            text[..second].to_string()
        };
        assert!(matches!(from_toml(&cut), Err(Error::InvalidSpec(_))));
        assert!(matches!(from_toml("not toml at all ==="), Err(Error::InvalidSpec(_))));
    }

    #[test]
    fn unknown_kind_rejected() {
        let model = sample_models().remove(0);
        let text = to_toml(&model).unwrap();
        let bad = text.replacen("kind = \"egpssm\"", "kind = \"mystery\"", 1);
        assert!(matches!(from_toml(&bad), Err(Error::InvalidSpec(_))));
    }
}
