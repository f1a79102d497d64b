//! Generative state-space models and their sampled evidence lower bounds.
//!
//! [`EgpssmModel`] holds one shared sparse GP whose scalar output feeds one
//! normalizing flow per latent dimension; [`BaselineModel`] keeps independent
//! sparse GPs per dimension. Both share the linear-Gaussian emission
//! `y_t ~ N(C x_t, R)` and diagonal process noise `Q`, and train the same
//! ELBO: expected emission log-likelihood under reparametrized latent
//! rollouts, minus `KL(q(u) || p(u))` and `KL(q(x0) || p(x0))`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{standard_normal, Sequence};
use crate::error::Error;
use crate::flows::FlowStack;
use crate::kernels::KernelParams;
use crate::numerics::{DiagGaussian, Mat};
use crate::scalar::Scalar;
use crate::sparse_gp::{GpPosterior, InducingState};
use crate::Result;

/// Floor applied to the GP conditional variance before taking its square root
/// in the sampling path; keeps the tape free of `sqrt(0)`.
const VAR_FLOOR: f64 = 1e-12;

/// Trainable diagonal Gaussian (variational `q(x0)`), variance in log space.
#[derive(Debug, Clone)]
pub struct GaussParam<S> {
    pub mean: Vec<S>,
    pub log_var: Vec<S>,
}

impl<S: Scalar> GaussParam<S> {
    pub fn new(mean: Vec<f64>, var: Vec<f64>) -> Self {
        assert_eq!(mean.len(), var.len());
        GaussParam {
            mean: mean.into_iter().map(S::constant).collect(),
            log_var: var.into_iter().map(|v| S::constant(v.ln())).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn var(&self, i: usize) -> S {
        self.log_var[i].exp()
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> GaussParam<T> {
        GaussParam {
            mean: self.mean.iter().map(|&v| f(v)).collect(),
            log_var: self.log_var.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Fixed SSM structure plus trainable noise parameters.
#[derive(Debug, Clone)]
pub struct SsmParams<S> {
    pub d_x: usize,
    pub d_y: usize,
    pub d_c: usize,
    /// Fixed emission matrix, `d_y x d_x`; not trained.
    pub c_matrix: Mat<f64>,
    pub q_logvar: Vec<S>,
    pub r_logvar: Vec<S>,
    /// Fixed initial-state prior.
    pub x0_prior: DiagGaussian<f64>,
}

impl<S: Scalar> SsmParams<S> {
    /// Default emission `C = [I_{d_y} 0]` selecting the first `d_y` latents.
    pub fn selector_emission(d_y: usize, d_x: usize) -> Mat<f64> {
        assert!(d_y <= d_x);
        let mut c = Mat::zeros(d_y, d_x);
        for i in 0..d_y {
            c.set(i, i, 1.0);
        }
        c
    }

    pub fn new(d_x: usize, d_y: usize, d_c: usize, q_var: f64, r_var: f64) -> Self {
        SsmParams {
            d_x,
            d_y,
            d_c,
            c_matrix: Self::selector_emission(d_y, d_x),
            q_logvar: vec![S::constant(q_var.ln()); d_x],
            r_logvar: vec![S::constant(r_var.ln()); d_y],
            x0_prior: DiagGaussian::standard(d_x),
        }
    }

    pub fn emission_mean(&self, x: &[S]) -> Vec<S> {
        (0..self.d_y)
            .map(|i| {
                let mut acc = S::zero();
                for j in 0..self.d_x {
                    let c = self.c_matrix.get(i, j);
                    if c != 0.0 {
                        acc = acc + S::constant(c) * x[j];
                    }
                }
                acc
            })
            .collect()
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> SsmParams<T> {
        SsmParams {
            d_x: self.d_x,
            d_y: self.d_y,
            d_c: self.d_c,
            c_matrix: self.c_matrix.clone(),
            q_logvar: self.q_logvar.iter().map(|&v| f(v)).collect(),
            r_logvar: self.r_logvar.iter().map(|&v| f(v)).collect(),
            x0_prior: self.x0_prior.clone(),
        }
    }
}

/// Log density of an observation under the emission model `N(y | C x, R)`.
pub fn emission_loglik<S: Scalar>(ssm: &SsmParams<S>, x: &[S], y: &[S]) -> Result<S> {
    if x.len() != ssm.d_x {
        return Err(Error::DimensionMismatch { expected: ssm.d_x, got: x.len(), context: "emission state" });
    }
    if y.len() != ssm.d_y {
        return Err(Error::DimensionMismatch { expected: ssm.d_y, got: y.len(), context: "emission obs" });
    }
    let dist = DiagGaussian::new(
        ssm.emission_mean(x),
        ssm.r_logvar.iter().map(|v| v.exp()).collect(),
    );
    crate::numerics::gaussian_logpdf(y, &dist)
}

/// Shared GP + per-dimension flows.
#[derive(Debug, Clone)]
pub struct EgpssmModel<S> {
    pub ssm: SsmParams<S>,
    pub kernel: KernelParams<S>,
    pub gp: InducingState<S>,
    pub flows: Vec<FlowStack<S>>,
    /// One variational `q(x0)` per training sequence.
    pub x0_var: Vec<GaussParam<S>>,
}

/// Independent sparse GP per latent dimension.
#[derive(Debug, Clone)]
pub struct BaselineModel<S> {
    pub ssm: SsmParams<S>,
    pub kernels: Vec<KernelParams<S>>,
    pub gps: Vec<InducingState<S>>,
    pub x0_var: Vec<GaussParam<S>>,
}

#[derive(Debug, Clone)]
pub enum Model<S> {
    Egpssm(EgpssmModel<S>),
    Baseline(BaselineModel<S>),
}

impl<S: Scalar> Model<S> {
    pub fn ssm(&self) -> &SsmParams<S> {
        match self {
            Model::Egpssm(m) => &m.ssm,
            Model::Baseline(m) => &m.ssm,
        }
    }

    pub fn x0_var(&self) -> &[GaussParam<S>] {
        match self {
            Model::Egpssm(m) => &m.x0_var,
            Model::Baseline(m) => &m.x0_var,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Model::Egpssm(_) => "egpssm",
            Model::Baseline(_) => "baseline",
        }
    }

    pub fn map_params<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> Model<T> {
        match self {
            Model::Egpssm(m) => Model::Egpssm(EgpssmModel {
                ssm: m.ssm.map(f),
                kernel: m.kernel.map(f),
                gp: m.gp.map(f),
                flows: m.flows.iter().map(|fl| fl.map(f)).collect(),
                x0_var: m.x0_var.iter().map(|g| g.map(f)).collect(),
            }),
            Model::Baseline(m) => Model::Baseline(BaselineModel {
                ssm: m.ssm.map(f),
                kernels: m.kernels.iter().map(|k| k.map(f)).collect(),
                gps: m.gps.iter().map(|g| g.map(f)).collect(),
                x0_var: m.x0_var.iter().map(|g| g.map(f)).collect(),
            }),
        }
    }

    /// Named parameter blocks in the exact order `map_params` visits them.
    pub fn param_layout(&self) -> Vec<(String, usize)> {
        let mut layout = Vec::new();
        let ssm_blocks = |ssm: &SsmParams<S>, layout: &mut Vec<(String, usize)>| {
            layout.push(("q_logvar".into(), ssm.d_x));
            layout.push(("r_logvar".into(), ssm.d_y));
        };
        let kernel_blocks = |name: String, kp: &KernelParams<S>, layout: &mut Vec<(String, usize)>| {
            layout.push((format!("{name}.log_variance"), 1));
            layout.push((format!("{name}.log_lengthscales"), kp.input_dim()));
        };
        let gp_blocks = |name: String, gp: &InducingState<S>, layout: &mut Vec<(String, usize)>| {
            layout.push((format!("{name}.z"), gp.z.rows * gp.z.cols));
            layout.push((format!("{name}.m"), gp.m()));
            layout.push((format!("{name}.s_factor"), gp.s_factor_log.len()));
        };
        match self {
            Model::Egpssm(m) => {
                ssm_blocks(&m.ssm, &mut layout);
                kernel_blocks("kernel".into(), &m.kernel, &mut layout);
                gp_blocks("gp".into(), &m.gp, &mut layout);
                for (d, fl) in m.flows.iter().enumerate() {
                    layout.push((format!("flow{d}"), fl.param_count()));
                }
                for (s, g) in m.x0_var.iter().enumerate() {
                    layout.push((format!("x0_var{s}.mean"), g.dim()));
                    layout.push((format!("x0_var{s}.log_var"), g.dim()));
                }
            }
            Model::Baseline(m) => {
                ssm_blocks(&m.ssm, &mut layout);
                for (d, kp) in m.kernels.iter().enumerate() {
                    kernel_blocks(format!("kernel{d}"), kp, &mut layout);
                }
                for (d, gp) in m.gps.iter().enumerate() {
                    gp_blocks(format!("gp{d}"), gp, &mut layout);
                }
                for (s, g) in m.x0_var.iter().enumerate() {
                    layout.push((format!("x0_var{s}.mean"), g.dim()));
                    layout.push((format!("x0_var{s}.log_var"), g.dim()));
                }
            }
        }
        layout
    }
}

/// ELBO value with its additive parts; `total = exp_loglik - kl_u - kl_x0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboEstimate<S> {
    pub total: S,
    pub exp_loglik: S,
    pub kl_u: S,
    pub kl_x0: S,
}

impl<S: Scalar> ElboEstimate<S> {
    pub fn values(&self) -> ElboEstimate<f64> {
        ElboEstimate {
            total: self.total.value(),
            exp_loglik: self.exp_loglik.value(),
            kl_u: self.kl_u.value(),
            kl_x0: self.kl_x0.value(),
        }
    }
}

/// Streams standard-normal draws in a fixed order; the sole randomness source
/// for ELBO evaluation and forecasting.
pub struct NoiseSource {
    rng: ChaCha8Rng,
}

impl NoiseSource {
    pub fn new(seed: u64) -> Self {
        NoiseSource { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn next_normal(&mut self) -> f64 {
        standard_normal(&mut self.rng)
    }

    fn fill(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.next_normal()).collect()
    }
}

/// Per-evaluation transition engine: factored GPs plus process-noise scales.
pub struct TransitionEngine<'a, S> {
    posteriors: Vec<GpPosterior<'a, S>>,
    flows: Option<&'a [FlowStack<S>]>,
    ssm: &'a SsmParams<S>,
}

impl<'a, S: Scalar> TransitionEngine<'a, S> {
    pub fn new(model: &'a Model<S>) -> Result<Self> {
        match model {
            Model::Egpssm(m) => Ok(TransitionEngine {
                posteriors: vec![GpPosterior::new(&m.gp, &m.kernel)?],
                flows: Some(&m.flows),
                ssm: &m.ssm,
            }),
            Model::Baseline(m) => {
                let posteriors = m
                    .gps
                    .iter()
                    .zip(&m.kernels)
                    .map(|(gp, kp)| GpPosterior::new(gp, kp))
                    .collect::<Result<Vec<_>>>()?;
                Ok(TransitionEngine { posteriors, flows: None, ssm: &m.ssm })
            }
        }
    }

    /// Number of `eps_f` draws a single step consumes.
    pub fn n_eps_f(&self) -> usize {
        self.posteriors.len()
    }

    /// One transition with explicit noise; returns `(f_tilde values, f, x_next)`.
    pub fn step(
        &self,
        x_prev: &[S],
        c_prev: &[S],
        eps_f: &[f64],
        eps_x: &[f64],
    ) -> Result<(Vec<S>, Vec<S>, Vec<S>)> {
        let d_x = self.ssm.d_x;
        debug_assert_eq!(eps_f.len(), self.n_eps_f());
        debug_assert_eq!(eps_x.len(), d_x);
        let mut input = Vec::with_capacity(d_x + self.ssm.d_c);
        input.extend_from_slice(x_prev);
        input.extend_from_slice(c_prev);

        let mut f_tilde = Vec::with_capacity(self.n_eps_f());
        let f: Vec<S> = match self.flows {
            Some(flows) => {
                let (mu, s2) = self.posteriors[0].moments(&input);
                let s2 = floor_var(s2);
                let ft = crate::numerics::reparam_sample(mu, s2, eps_f[0])?;
                f_tilde.push(ft);
                flows.iter().map(|fl| fl.forward(ft)).collect()
            }
            None => (0..d_x)
                .map(|d| {
                    let (mu, s2) = self.posteriors[d].moments(&input);
                    let s2 = floor_var(s2);
                    let ft = crate::numerics::reparam_sample(mu, s2, eps_f[d])?;
                    f_tilde.push(ft);
                    Ok(ft)
                })
                .collect::<Result<Vec<S>>>()?,
        };
        let x_next: Vec<S> = (0..d_x)
            .map(|d| {
                let q_std = (self.ssm.q_logvar[d] * S::constant(0.5)).exp();
                f[d] + q_std * S::constant(eps_x[d])
            })
            .collect();
        Ok((f_tilde, f, x_next))
    }

    pub fn kl_u(&self) -> Result<S> {
        let mut acc = S::zero();
        for p in &self.posteriors {
            acc = acc + p.kl()?;
        }
        Ok(acc)
    }
}

fn floor_var<S: Scalar>(s2: S) -> S {
    if s2.value() < VAR_FLOOR {
        S::constant(VAR_FLOOR)
    } else {
        s2
    }
}

/// One reparametrized transition of the shared-GP model with explicit noise.
pub fn sample_transition<S: Scalar>(
    model: &EgpssmModel<S>,
    x_prev: &[S],
    c_prev: &[S],
    eps_f: f64,
    eps_x: &[f64],
) -> Result<(S, Vec<S>, Vec<S>)> {
    let wrapped = Model::Egpssm(model.clone());
    let engine = TransitionEngine::new(&wrapped)?;
    let (ft, f, x) = engine.step(x_prev, c_prev, &[eps_f], eps_x)?;
    Ok((ft[0], f, x))
}

/// `KL(q(x0) || p(x0))` for diagonal Gaussians, in closed form.
fn kl_diag<S: Scalar>(q: &GaussParam<S>, p: &DiagGaussian<f64>) -> S {
    let mut acc = S::zero();
    let half = S::constant(0.5);
    for i in 0..q.dim() {
        let pv = S::constant(p.var[i]);
        let qv = q.var(i);
        let dm = q.mean[i] - S::constant(p.mean[i]);
        acc = acc + half * (qv / pv + dm * dm / pv - S::one() + pv.ln() - qv.ln());
    }
    acc
}

/// Monte-Carlo ELBO over a set of training sequences, deterministic per seed.
///
/// Each of the `n_mc` samples draws `x0` from the sequence's `q(x0)` and rolls
/// the transition forward, accumulating emission log-likelihoods; the KL
/// terms are computed in closed form.
pub fn elbo<S: Scalar>(
    model: &Model<S>,
    sequences: &[Sequence],
    n_mc: usize,
    seed: u64,
) -> Result<ElboEstimate<S>> {
    if n_mc == 0 {
        return Err(Error::InvalidConfig("n_mc must be >= 1".into()));
    }
    if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySequence);
    }
    let x0_var = model.x0_var();
    if x0_var.len() < sequences.len() {
        return Err(Error::InvalidConfig(format!(
            "model holds {} q(x0) entries for {} sequences",
            x0_var.len(),
            sequences.len()
        )));
    }
    let ssm = model.ssm();
    let engine = TransitionEngine::new(model)?;
    let mut noise = NoiseSource::new(seed);
    let inv_mc = S::constant(1.0 / n_mc as f64);

    let mut exp_loglik = S::zero();
    for (s, seq) in sequences.iter().enumerate() {
        if seq.d_y() != ssm.d_y {
            return Err(Error::DimensionMismatch { expected: ssm.d_y, got: seq.d_y(), context: "sequence d_y" });
        }
        if seq.d_c() != ssm.d_c {
            return Err(Error::DimensionMismatch { expected: ssm.d_c, got: seq.d_c(), context: "sequence d_c" });
        }
        let q0 = &x0_var[s];
        for _ in 0..n_mc {
            let eps0 = noise.fill(ssm.d_x);
            let mut x: Vec<S> = (0..ssm.d_x)
                .map(|d| q0.mean[d] + (q0.log_var[d] * S::constant(0.5)).exp() * S::constant(eps0[d]))
                .collect();
            for t in 0..seq.len() {
                let eps_f = noise.fill(engine.n_eps_f());
                let eps_x = noise.fill(ssm.d_x);
                let c_row: Vec<S> = seq.c.row(t).iter().map(|&v| S::constant(v)).collect();
                let (_, _, x_next) = engine.step(&x, &c_row, &eps_f, &eps_x)?;
                x = x_next;
                let y_row: Vec<S> = seq.y.row(t).iter().map(|&v| S::constant(v)).collect();
                exp_loglik = exp_loglik + inv_mc * emission_loglik(ssm, &x, &y_row)?;
            }
        }
    }

    let kl_u = engine.kl_u()?;
    let mut kl_x0 = S::zero();
    for s in 0..sequences.len() {
        kl_x0 = kl_x0 + kl_diag(&x0_var[s], &ssm.x0_prior);
    }
    let total = exp_loglik - kl_u - kl_x0;
    Ok(ElboEstimate { total, exp_loglik, kl_u, kl_x0 })
}

/// Stochastic multi-step forecast starting from an explicit state distribution.
///
/// Runs `n_mc` rollouts; per step returns the sample mean and variance of the
/// emission mean `C x_t`. `future_c` supplies the controls for the forecast
/// horizon (required when `d_c > 0`).
pub fn forecast_from_state(
    model: &Model<f64>,
    init: &DiagGaussian<f64>,
    future_c: Option<&Mat<f64>>,
    horizon: usize,
    n_mc: usize,
    seed: u64,
) -> Result<(Mat<f64>, Mat<f64>)> {
    forecast_impl(model, init, None, future_c, horizon, n_mc, seed)
}

/// Forecast after re-synchronizing on a warm-up prefix.
///
/// The initial state is drawn from `init` and propagated through the warm-up
/// rows' controls (the warm-up observations themselves are not revisited),
/// then the forecast continues for `horizon` steps.
pub fn forecast(
    model: &Model<f64>,
    init: &DiagGaussian<f64>,
    warmup: &Sequence,
    future_c: Option<&Mat<f64>>,
    horizon: usize,
    n_mc: usize,
    seed: u64,
) -> Result<(Mat<f64>, Mat<f64>)> {
    if warmup.is_empty() {
        return Err(Error::EmptySequence);
    }
    forecast_impl(model, init, Some(warmup), future_c, horizon, n_mc, seed)
}

fn forecast_impl(
    model: &Model<f64>,
    init: &DiagGaussian<f64>,
    warmup: Option<&Sequence>,
    future_c: Option<&Mat<f64>>,
    horizon: usize,
    n_mc: usize,
    seed: u64,
) -> Result<(Mat<f64>, Mat<f64>)> {
    if horizon == 0 || n_mc == 0 {
        return Err(Error::InvalidConfig("forecast needs horizon >= 1 and n_mc >= 1".into()));
    }
    let ssm = model.ssm();
    if init.dim() != ssm.d_x {
        return Err(Error::DimensionMismatch { expected: ssm.d_x, got: init.dim(), context: "forecast init" });
    }
    if ssm.d_c > 0 {
        let have = future_c.map_or(0, |m| m.rows);
        if have < horizon {
            return Err(Error::DimensionMismatch { expected: horizon, got: have, context: "future controls" });
        }
    }
    let engine = TransitionEngine::new(model)?;
    let mut noise = NoiseSource::new(seed);
    let mut sum = Mat::<f64>::zeros(horizon, ssm.d_y);
    let mut sum_sq = Mat::<f64>::zeros(horizon, ssm.d_y);
    let empty = vec![0.0; 0];
    for _ in 0..n_mc {
        let mut x: Vec<f64> = (0..ssm.d_x)
            .map(|d| init.mean[d] + init.var[d].sqrt() * noise.next_normal())
            .collect();
        if let Some(w) = warmup {
            for t in 0..w.len() {
                let eps_f = noise.fill(engine.n_eps_f());
                let eps_x = noise.fill(ssm.d_x);
                let (_, _, x_next) = engine.step(&x, w.c.row(t), &eps_f, &eps_x)?;
                x = x_next;
            }
        }
        for h in 0..horizon {
            let eps_f = noise.fill(engine.n_eps_f());
            let eps_x = noise.fill(ssm.d_x);
            let c_row = match future_c {
                Some(m) if m.cols > 0 => m.row(h).to_vec(),
                _ => empty.clone(),
            };
            let (_, _, x_next) = engine.step(&x, &c_row, &eps_f, &eps_x)?;
            x = x_next;
            let y_mean = ssm.emission_mean(&x);
            for j in 0..ssm.d_y {
                sum.set(h, j, sum.get(h, j) + y_mean[j]);
                sum_sq.set(h, j, sum_sq.get(h, j) + y_mean[j] * y_mean[j]);
            }
        }
    }
    let nf = n_mc as f64;
    let mut mean = Mat::<f64>::zeros(horizon, ssm.d_y);
    let mut var = Mat::<f64>::zeros(horizon, ssm.d_y);
    for h in 0..horizon {
        for j in 0..ssm.d_y {
            let m = sum.get(h, j) / nf;
            mean.set(h, j, m);
            var.set(h, j, (sum_sq.get(h, j) / nf - m * m).max(0.0));
        }
    }
    Ok((mean, var))
}

/// Root-mean-square error over all entries.
pub fn rmse(pred: &Mat<f64>, truth: &Mat<f64>) -> Result<f64> {
    if pred.rows != truth.rows || pred.cols != truth.cols {
        return Err(Error::DimensionMismatch {
            expected: truth.rows * truth.cols,
            got: pred.rows * pred.cols,
            context: "rmse shapes",
        });
    }
    let n = (pred.rows * pred.cols) as f64;
    let sq: f64 = pred.data.iter().zip(&truth.data).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / n).sqrt())
}

/// Forecast quality on one held-out sequence, with the persistence reference.
#[derive(Debug, Clone)]
pub struct ForecastEval {
    pub rmse: f64,
    pub persistence_rmse: f64,
    pub pred_mean: Mat<f64>,
    pub pred_var: Mat<f64>,
}

/// Roll the model over a test sequence and score it against the truth.
///
/// The initial state is conditioned on the first test observation (observed
/// latents get that value with the emission-noise variance; unobserved latents
/// keep the prior), then the remaining `T - 1` rows are forecast using the
/// test controls. The persistence forecast repeats the first observation.
pub fn evaluate_forecast(
    model: &Model<f64>,
    test: &Sequence,
    n_mc: usize,
    seed: u64,
) -> Result<ForecastEval> {
    if test.len() < 2 {
        return Err(Error::SequenceTooShort { len: test.len(), needed: 2 });
    }
    let ssm = model.ssm();
    let mut mean = vec![0.0; ssm.d_x];
    let mut var = ssm.x0_prior.var.clone();
    for d in 0..ssm.d_x {
        for i in 0..ssm.d_y {
            if ssm.c_matrix.get(i, d) == 1.0 {
                mean[d] = test.y.get(0, i);
                var[d] = ssm.r_logvar[i].exp();
            }
        }
    }
    let init = DiagGaussian { mean, var };
    let horizon = test.len() - 1;
    let future = test.slice(1, test.len());
    let future_c = if ssm.d_c > 0 { Some(&future.c) } else { None };
    let (pred_mean, pred_var) = forecast_from_state(model, &init, future_c, horizon, n_mc, seed)?;
    let rmse_val = rmse(&pred_mean, &future.y)?;
    let persist = persistence_forecast(test.y.row(0), horizon);
    let persistence_rmse = rmse(&persist, &future.y)?;
    Ok(ForecastEval { rmse: rmse_val, persistence_rmse, pred_mean, pred_var })
}

/// Repeat the last observed value over the horizon.
pub fn persistence_forecast(last_y: &[f64], horizon: usize) -> Mat<f64> {
    let mut out = Mat::zeros(horizon, last_y.len());
    for h in 0..horizon {
        for j in 0..last_y.len() {
            out.set(h, j, last_y[j]);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// Model initialization

/// Settings for building an untrained model from data.
#[derive(Debug, Clone)]
pub struct BuildConfig {
    /// `"egpssm"` or `"baseline"`.
    pub model: String,
    pub d_x: usize,
    /// Number of inducing points.
    pub m: usize,
    pub kernel_family: crate::kernels::KernelFamily,
    /// SAL layers per flow; `0` selects the affine flow. Ignored by the baseline.
    pub sal_layers: usize,
    pub q_var_init: f64,
    pub r_var_init: f64,
    /// Scale of the initial `q(u)` covariance factor.
    pub s_init_scale: f64,
    pub seed: u64,
}

impl Default for BuildConfig {
    fn default() -> Self {
        BuildConfig {
            model: "egpssm".into(),
            d_x: 2,
            m: 15,
            kernel_family: crate::kernels::KernelFamily::SquaredExponential,
            sal_layers: 0,
            q_var_init: 0.01,
            r_var_init: 0.01,
            s_init_scale: 0.1,
            seed: 0,
        }
    }
}

/// Per-dimension ranges of the GP input `(x, c)` implied by the data.
///
/// Latent dimensions observed through the selector emission take the range of
/// their observation channel; unobserved latents fall back to the pooled
/// observation range.
fn input_ranges(cfg: &BuildConfig, sequences: &[Sequence]) -> Vec<(f64, f64)> {
    let d_y = sequences[0].d_y();
    let d_c = sequences[0].d_c();
    let mut y_lo = vec![f64::INFINITY; d_y];
    let mut y_hi = vec![f64::NEG_INFINITY; d_y];
    let mut c_lo = vec![f64::INFINITY; d_c];
    let mut c_hi = vec![f64::NEG_INFINITY; d_c];
    for seq in sequences {
        for t in 0..seq.len() {
            for j in 0..d_y {
                y_lo[j] = y_lo[j].min(seq.y.get(t, j));
                y_hi[j] = y_hi[j].max(seq.y.get(t, j));
            }
            for j in 0..d_c {
                c_lo[j] = c_lo[j].min(seq.c.get(t, j));
                c_hi[j] = c_hi[j].max(seq.c.get(t, j));
            }
        }
    }
    let pool_lo = y_lo.iter().cloned().fold(f64::INFINITY, f64::min);
    let pool_hi = y_hi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = |lo: f64, hi: f64| {
        let w = (hi - lo).max(1e-6);
        (lo - 0.05 * w, hi + 0.05 * w)
    };
    let mut ranges = Vec::with_capacity(cfg.d_x + d_c);
    for d in 0..cfg.d_x {
        if d < d_y {
            ranges.push(pad(y_lo[d], y_hi[d]));
        } else {
            ranges.push(pad(pool_lo, pool_hi));
        }
    }
    for j in 0..d_c {
        ranges.push(pad(c_lo[j], c_hi[j]));
    }
    ranges
}

/// Initial `q(x0)` for one sequence: observed latents start at the first
/// observation with the emission-noise variance, the rest at the prior.
fn init_x0(ssm: &SsmParams<f64>, seq: &Sequence) -> GaussParam<f64> {
    let mut mean = vec![0.0; ssm.d_x];
    let mut var = vec![1.0; ssm.d_x];
    for d in 0..ssm.d_x {
        // pseudo-inverse of the selector emission: latent d is observed by
        // channel i exactly when C[i][d] = 1
        for i in 0..ssm.d_y {
            if ssm.c_matrix.get(i, d) == 1.0 {
                mean[d] = seq.y.get(0, i);
                var[d] = ssm.r_logvar[i].exp();
            }
        }
    }
    GaussParam::new(mean, var)
}

/// Build an untrained model sized to the given training sequences.
pub fn build_model(cfg: &BuildConfig, sequences: &[Sequence]) -> Result<Model<f64>> {
    if sequences.is_empty() || sequences.iter().any(|s| s.is_empty()) {
        return Err(Error::EmptySequence);
    }
    let d_y = sequences[0].d_y();
    let d_c = sequences[0].d_c();
    if cfg.d_x < d_y {
        return Err(Error::InvalidConfig(format!(
            "d_x = {} must be at least d_y = {d_y}",
            cfg.d_x
        )));
    }
    if cfg.m == 0 {
        return Err(Error::InvalidConfig("need at least one inducing point".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ssm = SsmParams::new(cfg.d_x, d_y, d_c, cfg.q_var_init, cfg.r_var_init);
    let ranges = input_ranges(cfg, sequences);
    let lengthscales = vec![1.0; cfg.d_x + d_c];
    let x0_var = sequences.iter().map(|s| init_x0(&ssm, s)).collect();
    match cfg.model.as_str() {
        "egpssm" => {
            let kernel = KernelParams::new(cfg.kernel_family, 1.0, &lengthscales);
            let z = crate::sparse_gp::inducing_grid_uniform(cfg.m, &ranges, &mut rng);
            let gp = InducingState::<f64>::init(z, cfg.s_init_scale);
            let flows = (0..cfg.d_x)
                .map(|_| FlowStack::init_near_identity(cfg.sal_layers, &mut rng))
                .collect();
            Ok(Model::Egpssm(EgpssmModel { ssm, kernel, gp, flows, x0_var }))
        }
        "baseline" => {
            let mut kernels = Vec::with_capacity(cfg.d_x);
            let mut gps = Vec::with_capacity(cfg.d_x);
            for _ in 0..cfg.d_x {
                kernels.push(KernelParams::new(cfg.kernel_family, 1.0, &lengthscales));
                let z = crate::sparse_gp::inducing_grid_uniform(cfg.m, &ranges, &mut rng);
                gps.push(InducingState::<f64>::init(z, cfg.s_init_scale));
            }
            Ok(Model::Baseline(BaselineModel { ssm, kernels, gps, x0_var }))
        }
        other => Err(Error::InvalidConfig(format!("unknown model: {other}"))),
    }
}

// ---------------------------------------------------------------------------
// Parameter counting (complexity study)

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Prssm,
    Odgpssm,
    Egpssm,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "prssm" | "baseline" => Ok(ModelKind::Prssm),
            "odgpssm" => Ok(ModelKind::Odgpssm),
            "egpssm" => Ok(ModelKind::Egpssm),
            other => Err(Error::InvalidSpec(format!("unknown model kind: {other}"))),
        }
    }
}

/// Inputs to the closed-form parameter-count formulas.
#[derive(Debug, Clone, Copy)]
pub struct CountSpec {
    pub kind: ModelKind,
    pub d_x: usize,
    pub m: usize,
    /// Number of latent GPs; only meaningful for ODGPSSM.
    pub q_latent: Option<usize>,
    /// Kernel hyperparameter count per GP.
    pub theta_gp: usize,
    /// Flow parameter count per dimension; only meaningful for EGPSSM.
    pub eta: usize,
    /// Parameters shared by all models.
    pub c: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ComplexityReport {
    pub kind: ModelKind,
    pub params_total: f64,
    pub complexity_class: String,
}

/// Closed-form parameter counts and complexity class per model family.
pub fn count_params(spec: &CountSpec) -> Result<ComplexityReport> {
    if spec.d_x == 0 || spec.m == 0 {
        return Err(Error::InvalidSpec("d_x and m must be positive".into()));
    }
    let (d_x, m, theta, c) = (spec.d_x as f64, spec.m as f64, spec.theta_gp as f64, spec.c as f64);
    let (params_total, complexity_class) = match spec.kind {
        ModelKind::Prssm => (
            c + d_x * theta + m * d_x * (2.0 * d_x + m + 4.0) / 2.0,
            "O(d_x T m^2)".to_string(),
        ),
        ModelKind::Odgpssm => {
            let q = spec.q_latent.ok_or_else(|| {
                Error::InvalidSpec("ODGPSSM count requires q_latent".into())
            })? as f64;
            if q < 1.0 {
                return Err(Error::InvalidSpec("q_latent must be positive".into()));
            }
            (
                c + q * theta + m * q * (2.0 * q + m + 4.0) / 2.0 + q * d_x,
                "O(Q T m^2)".to_string(),
            )
        }
        ModelKind::Egpssm => (
            c + theta + m * (2.0 * d_x + m + 4.0) / 2.0 + spec.eta as f64 * d_x,
            "O(T m^2)".to_string(),
        ),
    };
    Ok(ComplexityReport { kind: spec.kind, params_total, complexity_class })
}
