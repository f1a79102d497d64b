//! Sparse variational GP over inducing points, with an exact-GP oracle.
//!
//! The variational posterior over inducing values is `q(u) = N(m, S)` with
//! `S = L_S L_S^T`; the factor is stored with a log diagonal so unconstrained
//! optimization preserves positive definiteness. Conditioning on a state
//! `x` gives the marginal
//!
//! ```text
//! mu(x) = k_xz Kzz^-1 m
//! s2(x) = k(x,x) - k_xz Kzz^-1 (Kzz - S) Kzz^-1 k_xz^T
//! ```
//!
//! evaluated with triangular solves against the jittered Cholesky of `Kzz`.

use std::cell::Cell;

use crate::kernels::{kernel_gram, kernel_vec, KernelParams};
use crate::numerics::{cholesky_jitter, default_base_jitter, CholFactor, Mat};
use crate::scalar::{dot, Scalar};
use crate::Result;

pub const JITTER_TRIES: usize = 8;

/// Inducing inputs plus the variational Gaussian over their function values.
#[derive(Debug, Clone)]
pub struct InducingState<S> {
    /// Inducing inputs, `m x d_in`.
    pub z: Mat<S>,
    /// Variational mean, length `m`.
    pub m_vec: Vec<S>,
    /// Packed lower triangle of the covariance factor; diagonal entries stored as logs.
    pub s_factor_log: Vec<S>,
}

impl<S: Scalar> InducingState<S> {
    /// Number of inducing points.
    pub fn m(&self) -> usize {
        self.m_vec.len()
    }

    /// Build from a dense covariance factor (values, not logs).
    pub fn from_parts(z: Mat<S>, m_vec: Vec<S>, s_factor: &Mat<S>) -> Self {
        let m = m_vec.len();
        assert_eq!(z.rows, m);
        assert_eq!(s_factor.rows, m);
        let mut packed = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                let v = s_factor.get(i, j);
                packed.push(if i == j { v.ln() } else { v });
            }
        }
        InducingState { z, m_vec, s_factor_log: packed }
    }

    /// Initialization: given inducing inputs, `q(u) = N(0, (scale^2) I)`.
    pub fn init(z: Mat<f64>, scale: f64) -> InducingState<f64> {
        let m = z.rows;
        let mut packed = Vec::with_capacity(m * (m + 1) / 2);
        for i in 0..m {
            for j in 0..=i {
                packed.push(if i == j { scale.ln() } else { 0.0 });
            }
        }
        InducingState { z, m_vec: vec![0.0; m], s_factor_log: packed }
    }

    /// Materialize the covariance factor with the log diagonal exponentiated.
    pub fn s_factor(&self) -> CholFactor<S> {
        let m = self.m();
        let mut l = Vec::with_capacity(self.s_factor_log.len());
        let mut idx = 0;
        for i in 0..m {
            for j in 0..=i {
                let v = self.s_factor_log[idx];
                l.push(if i == j { v.exp() } else { v });
                idx += 1;
            }
        }
        CholFactor { n: m, l, jitter_used: 0.0 }
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> InducingState<T> {
        InducingState {
            z: self.z.map(f),
            m_vec: self.m_vec.iter().map(|&v| f(v)).collect(),
            s_factor_log: self.s_factor_log.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Precomputed per-evaluation state: the factored `Kzz` and the materialized `L_S`.
///
/// Building this once per ELBO evaluation amortizes the `O(m^3)` factorization
/// over all time steps.
pub struct GpPosterior<'a, S> {
    pub gp: &'a InducingState<S>,
    pub kp: &'a KernelParams<S>,
    pub chol_kzz: CholFactor<S>,
    pub s_factor: CholFactor<S>,
    max_clamp: Cell<f64>,
}

impl<'a, S: Scalar> GpPosterior<'a, S> {
    pub fn new(gp: &'a InducingState<S>, kp: &'a KernelParams<S>) -> Result<Self> {
        let kzz = kernel_gram(kp, &gp.z)?;
        let chol_kzz = cholesky_jitter(&kzz, default_base_jitter(&kzz), JITTER_TRIES)?;
        Ok(GpPosterior { gp, kp, chol_kzz, s_factor: gp.s_factor(), max_clamp: Cell::new(0.0) })
    }

    /// Marginal `(mu, s2)` of the sampled GP value at input `x`.
    pub fn moments(&self, x: &[S]) -> (S, S) {
        let kx = kernel_vec(self.kp, x, &self.gp.z);
        let a = self.chol_kzz.solve_lower(&kx);
        let b = self.chol_kzz.solve_upper_t(&a);
        let mu = dot(&b, &self.gp.m_vec);
        let sb = self.s_factor.mul_transpose(&b);
        let kxx = self.kp.eval(x, x);
        let s2 = kxx - dot(&a, &a) + dot(&sb, &sb);
        if s2.value() < 0.0 {
            self.max_clamp.set(self.max_clamp.get().max(-s2.value()));
            (mu, S::zero())
        } else {
            (mu, s2)
        }
    }

    /// Largest negative variance clamped away so far.
    pub fn max_clamp(&self) -> f64 {
        self.max_clamp.get()
    }

    /// `KL(q(u) || N(0, Kzz))`.
    pub fn kl(&self) -> Result<S> {
        let zeros = vec![S::zero(); self.gp.m()];
        crate::numerics::gaussian_kl(&self.gp.m_vec, &self.s_factor, &zeros, &self.chol_kzz)
    }
}

/// Marginal moments of `q(f_tilde | x)`; see [`GpPosterior::moments`].
pub fn conditional_moments<S: Scalar>(
    gp: &InducingState<S>,
    kp: &KernelParams<S>,
    x: &[S],
) -> Result<(S, S)> {
    Ok(GpPosterior::new(gp, kp)?.moments(x))
}

/// `KL(q(u) || p(u))` with the prior `p(u) = N(0, Kzz)`.
pub fn kl_inducing<S: Scalar>(gp: &InducingState<S>, kp: &KernelParams<S>) -> Result<S> {
    GpPosterior::new(gp, kp)?.kl()
}

/// Exact noise-free GP posterior at a test point (Gaussian-process regression).
///
/// Serves as the oracle the sparse posterior is tested against.
pub fn exact_gp_posterior<S: Scalar>(
    kp: &KernelParams<S>,
    x_train: &Mat<S>,
    f_train: &[S],
    x_star: &[S],
) -> Result<(S, S)> {
    let kxx = kernel_gram(kp, x_train)?;
    let chol = cholesky_jitter(&kxx, default_base_jitter(&kxx), JITTER_TRIES)?;
    let ks = kernel_vec(kp, x_star, x_train);
    let a = chol.solve_lower(&ks);
    let alpha = chol.solve_lower(&f_train.to_vec());
    let xi = dot(&a, &alpha);
    let big_xi = kp.eval(x_star, x_star) - dot(&a, &a);
    let big_xi = if big_xi.value() < 0.0 { S::zero() } else { big_xi };
    Ok((xi, big_xi))
}

/// Place `m` inducing inputs uniformly over a per-dimension range.
pub fn inducing_grid_uniform(
    m: usize,
    ranges: &[(f64, f64)],
    rng: &mut impl rand::Rng,
) -> Mat<f64> {
    let d = ranges.len();
    let mut z = Mat::zeros(m, d);
    for i in 0..m {
        for (j, &(lo, hi)) in ranges.iter().enumerate() {
            z.set(i, j, rng.gen_range(lo..hi));
        }
    }
    z
}
