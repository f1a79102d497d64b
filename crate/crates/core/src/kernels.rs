//! Stationary covariance functions with ARD lengthscales.
//!
//! Hyperparameters are stored in log space so unconstrained gradient steps
//! keep them positive; accessors expose the positive values.

use crate::error::Error;
use crate::numerics::{Mat, SymMatrix};
use crate::scalar::Scalar;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    SquaredExponential,
    Matern52,
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "se" | "squared_exponential" | "rbf" => Ok(KernelFamily::SquaredExponential),
            "matern52" | "matern" => Ok(KernelFamily::Matern52),
            other => Err(Error::InvalidConfig(format!("unknown kernel family: {other}"))),
        }
    }
}

/// Kernel hyperparameters: signal variance and one lengthscale per input dimension.
#[derive(Debug, Clone)]
pub struct KernelParams<S> {
    pub family: KernelFamily,
    pub log_variance: S,
    pub log_lengthscales: Vec<S>,
}

impl<S: Scalar> KernelParams<S> {
    pub fn new(family: KernelFamily, variance: f64, lengthscales: &[f64]) -> Self {
        assert!(variance > 0.0 && !lengthscales.is_empty());
        assert!(lengthscales.iter().all(|&l| l > 0.0));
        KernelParams {
            family,
            log_variance: S::constant(variance.ln()),
            log_lengthscales: lengthscales.iter().map(|&l| S::constant(l.ln())).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.log_lengthscales.len()
    }

    pub fn variance(&self) -> S {
        self.log_variance.exp()
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> KernelParams<T> {
        KernelParams {
            family: self.family,
            log_variance: f(self.log_variance),
            log_lengthscales: self.log_lengthscales.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Scaled squared distance `sum_d ((a_d - b_d) / l_d)^2`.
    fn scaled_sq_dist(&self, a: &[S], b: &[S]) -> S {
        let mut acc = S::zero();
        for d in 0..a.len() {
            let inv_l = (-self.log_lengthscales[d]).exp();
            let diff = (a[d] - b[d]) * inv_l;
            acc = acc + diff * diff;
        }
        acc
    }

    /// Evaluate `k(a, b)`.
    pub fn eval(&self, a: &[S], b: &[S]) -> S {
        debug_assert_eq!(a.len(), self.input_dim());
        debug_assert_eq!(b.len(), self.input_dim());
        let s2 = self.scaled_sq_dist(a, b);
        match self.family {
            KernelFamily::SquaredExponential => self.variance() * (-S::constant(0.5) * s2).exp(),
            KernelFamily::Matern52 => {
                // At zero distance the kernel is exactly the variance; branching
                // here also keeps sqrt off the tape where its slope is undefined.
                if s2.value() == 0.0 {
                    return self.variance();
                }
                let r = s2.sqrt();
                let sqrt5 = S::constant(5f64.sqrt());
                let poly = S::one() + sqrt5 * r + S::constant(5.0 / 3.0) * s2;
                self.variance() * poly * (-sqrt5 * r).exp()
            }
        }
    }
}

fn check_dims<S: Scalar>(params: &KernelParams<S>, x: &Mat<S>) -> Result<()> {
    if x.cols != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.cols,
            context: "kernel input dimension",
        });
    }
    Ok(())
}

/// Cross-covariance matrix with entry `(i, j) = k(x_i, x2_j)`.
pub fn kernel_matrix<S: Scalar>(params: &KernelParams<S>, x: &Mat<S>, x2: &Mat<S>) -> Result<Mat<S>> {
    check_dims(params, x)?;
    check_dims(params, x2)?;
    let mut out = Mat::zeros(x.rows, x2.rows);
    for i in 0..x.rows {
        for j in 0..x2.rows {
            out.set(i, j, params.eval(x.row(i), x2.row(j)));
        }
    }
    Ok(out)
}

/// Square covariance matrix `K(X, X)` as a symmetric matrix.
pub fn kernel_gram<S: Scalar>(params: &KernelParams<S>, x: &Mat<S>) -> Result<SymMatrix<S>> {
    let k = kernel_matrix(params, x, x)?;
    Ok(SymMatrix::from_mat(&k))
}

/// Covariance vector `k(x_*, X)` against a set of points.
pub fn kernel_vec<S: Scalar>(params: &KernelParams<S>, x_star: &[S], x: &Mat<S>) -> Vec<S> {
    (0..x.rows).map(|i| params.eval(x_star, x.row(i))).collect()
}

/// Diagonal `k(x_i, x_i)`; for stationary families this is the variance.
pub fn kernel_diag<S: Scalar>(params: &KernelParams<S>, x: &Mat<S>) -> Result<Vec<S>> {
    check_dims(params, x)?;
    Ok((0..x.rows).map(|i| params.eval(x.row(i), x.row(i))).collect())
}
