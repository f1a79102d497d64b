//! Variational training: packing parameters, reverse-mode gradients, Adam.
//!
//! All trainable parameters live in unconstrained space (positives as logs),
//! so the optimizer takes plain gradient-ascent steps on a flat vector. One
//! ELBO evaluation on the tape yields the full gradient; the per-iteration
//! noise seed is derived from the configured seed so runs are reproducible.

use std::time::Instant;

use crate::autodiff::Tape;
use crate::data::Sequence;
use crate::error::Error;
use crate::ssm::{elbo, ElboEstimate, Model};
use crate::Result;

/// Optimizer and estimator settings.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Monte-Carlo samples per ELBO evaluation.
    pub n_mc: usize,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            learning_rate: 0.01,
            beta1: 0.9,
            beta2: 0.99,
            adam_eps: 1e-8,
            n_mc: 8,
            clip_norm: Some(10.0),
            seed: 0,
        }
    }
}

/// Flatten every trainable parameter into one vector, in `map_params` order.
pub fn pack(model: &Model<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    model.map_params(&mut |v| {
        out.push(v);
        v
    });
    out
}

/// Rebuild a model from a flat vector; the template supplies the structure.
pub fn unpack(template: &Model<f64>, values: &[f64]) -> Result<Model<f64>> {
    let mut it = values.iter();
    let mut short = false;
    let model = template.map_params(&mut |_| match it.next() {
        Some(&v) => v,
        None => {
            short = true;
            0.0
        }
    });
    if short || it.next().is_some() {
        return Err(Error::DimensionMismatch {
            expected: pack(template).len(),
            got: values.len(),
            context: "unpack parameter vector",
        });
    }
    Ok(model)
}

/// One name per flat-vector entry, expanded from the model's block layout.
pub fn param_names(model: &Model<f64>) -> Vec<String> {
    let mut names = Vec::new();
    for (block, len) in model.param_layout() {
        if len == 1 {
            names.push(block);
        } else {
            for i in 0..len {
                names.push(format!("{block}[{i}]"));
            }
        }
    }
    names
}

/// ELBO and its gradient with respect to every trainable parameter.
///
/// The model's parameters are registered as tape leaves in `map_params`
/// order, so the gradient aligns with [`pack`].
pub fn value_and_grad(
    model: &Model<f64>,
    sequences: &[Sequence],
    n_mc: usize,
    seed: u64,
) -> Result<(ElboEstimate<f64>, Vec<f64>)> {
    let tape = Tape::new();
    let lifted = model.map_params(&mut |v| tape.leaf(v));
    let est = elbo(&lifted, sequences, n_mc, seed)?;
    let adjoints = tape.gradient(est.total);
    let n = pack(model).len();
    let grad = adjoints[..n].to_vec();
    if let Some(bad) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { param: param_names(model)[bad].clone() });
    }
    Ok((est.values(), grad))
}

/// First- and second-moment accumulators for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: usize,
}

impl AdamState {
    pub fn new(dim: usize) -> Self {
        AdamState { m: vec![0.0; dim], v: vec![0.0; dim], t: 0 }
    }

    /// In-place ascent step along `grad`.
    pub fn step(&mut self, cfg: &TrainConfig, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), grad.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - cfg.beta1.powi(self.t as i32);
        let b2t = 1.0 - cfg.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * grad[i];
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] += cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.adam_eps);
        }
    }
}

/// Scale `grad` down to `max_norm` if it exceeds it; returns the pre-clip norm.
pub fn clip_by_norm(grad: &mut [f64], max_norm: f64) -> f64 {
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grad.iter_mut() {
            *g *= scale;
        }
    }
    norm
}

/// One row of the training log.
#[derive(Debug, Clone, serde::Serialize)]
pub struct TrainRecord {
    pub iteration: usize,
    pub elbo: f64,
    pub exp_loglik: f64,
    pub kl_u: f64,
    pub kl_x0: f64,
    pub grad_norm: f64,
    pub wall_ms: f64,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Per-iteration noise seed derived from the run seed.
pub fn iteration_seed(run_seed: u64, iteration: usize) -> u64 {
    splitmix64(run_seed ^ (iteration as u64).wrapping_mul(0x2545f4914f6cdd1d))
}

/// Maximize the ELBO with Adam; updates `model` in place and returns the log.
pub fn fit(model: &mut Model<f64>, sequences: &[Sequence], cfg: &TrainConfig) -> Result<Vec<TrainRecord>> {
    if cfg.iterations == 0 {
        return Err(Error::InvalidConfig("iterations must be >= 1".into()));
    }
    if cfg.learning_rate <= 0.0 || cfg.n_mc == 0 {
        return Err(Error::InvalidConfig("learning_rate and n_mc must be positive".into()));
    }
    let mut params = pack(model);
    let mut adam = AdamState::new(params.len());
    let mut log = Vec::with_capacity(cfg.iterations);
    let start = Instant::now();
    for iter in 0..cfg.iterations {
        let seed = iteration_seed(cfg.seed, iter);
        let (est, mut grad) = value_and_grad(model, sequences, cfg.n_mc, seed)?;
        let grad_norm = match cfg.clip_norm {
            Some(max) => clip_by_norm(&mut grad, max),
            None => grad.iter().map(|g| g * g).sum::<f64>().sqrt(),
        };
        adam.step(cfg, &mut params, &grad);
        *model = unpack(model, &params)?;
        log.push(TrainRecord {
            iteration: iter,
            elbo: est.total,
            exp_loglik: est.exp_loglik,
            kl_u: est.kl_u,
            kl_x0: est.kl_x0,
            grad_norm,
            wall_ms: start.elapsed().as_secs_f64() * 1e3,
        });
    }
    Ok(log)
}

/// Trailing moving average used to judge ascent on a noisy objective.
pub fn smoothed(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1);
    values
        .iter()
        .enumerate()
        .map(|(i, _)| {
            let lo = (i + 1).saturating_sub(window);
            let w = &values[lo..=i];
            w.iter().sum::<f64>() / w.len() as f64
        })
        .collect()
}
