//! Dense linear algebra and Gaussian primitives.
//!
//! Covariance matrices are carried as Cholesky factors throughout; every
//! `K^{-1}` application is two triangular solves against a jittered factor,
//! never an explicit inverse. All routines are generic over [`Scalar`] so the
//! same code runs in `f64` and on the reverse-mode tape.

use crate::error::Error;
use crate::scalar::{dot, Scalar};
use crate::Result;

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat<S> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> Mat<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![S::zero(); rows * cols] }
    }

    pub fn from_rows(rows: Vec<Vec<S>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c);
            data.extend(row);
        }
        Mat { rows: r, cols: c, data }
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: S) {
        self.data[i * self.cols + j] = v;
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> Mat<T> {
        Mat { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Matrix-vector product.
    pub fn matvec(&self, x: &[S]) -> Vec<S> {
        assert_eq!(self.cols, x.len());
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }
}

impl Mat<f64> {
    pub fn values<S: Scalar>(m: &Mat<S>) -> Mat<f64> {
        m.map(&mut |v| v.value())
    }
}

/// Symmetric matrix, stored dense row-major.
#[derive(Debug, Clone)]
pub struct SymMatrix<S> {
    pub n: usize,
    pub data: Vec<S>,
}

impl<S: Scalar> SymMatrix<S> {
    pub fn from_mat(m: &Mat<S>) -> Self {
        assert_eq!(m.rows, m.cols);
        SymMatrix { n: m.rows, data: m.data.clone() }
    }

    pub fn get(&self, i: usize, j: usize) -> S {
        self.data[i * self.n + j]
    }

    pub fn mean_diag(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i).value()).sum::<f64>() / self.n as f64
    }
}

/// Lower-triangular Cholesky factor of `A + jitter_used * I`.
#[derive(Debug, Clone)]
pub struct CholFactor<S> {
    pub n: usize,
    /// Packed lower triangle, row-major: row i holds i+1 entries.
    pub l: Vec<S>,
    pub jitter_used: f64,
}

impl<S: Scalar> CholFactor<S> {
    pub fn get(&self, i: usize, j: usize) -> S {
        debug_assert!(j <= i);
        self.l[i * (i + 1) / 2 + j]
    }

    /// Build from a dense lower-triangular matrix (entries above the diagonal ignored).
    pub fn from_dense_lower(m: &Mat<S>) -> Self {
        assert_eq!(m.rows, m.cols);
        let n = m.rows;
        let mut l = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                l.push(m.get(i, j));
            }
        }
        CholFactor { n, l, jitter_used: 0.0 }
    }

    /// Solve `L x = b`.
    pub fn solve_lower(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = vec![S::zero(); n];
        for i in 0..n {
            let row = &self.l[i * (i + 1) / 2..];
            let mut acc = b[i];
            for j in 0..i {
                acc = acc - row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        x
    }

    /// Solve `L^T x = b`.
    pub fn solve_upper_t(&self, b: &[S]) -> Vec<S> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x = b.to_vec();
        for i in (0..n).rev() {
            let xi = x[i] / self.get(i, i);
            x[i] = xi;
            for j in 0..i {
                x[j] = x[j] - self.get(i, j) * xi;
            }
        }
        x
    }

    /// Solve `(L L^T) x = b`.
    pub fn solve(&self, b: &[S]) -> Vec<S> {
        self.solve_upper_t(&self.solve_lower(b))
    }

    /// `L^T x` (used for quadratic forms `x^T S x = |L^T x|^2`).
    pub fn mul_transpose(&self, x: &[S]) -> Vec<S> {
        let n = self.n;
        let mut y = vec![S::zero(); n];
        for i in 0..n {
            for j in 0..=i {
                y[j] = y[j] + self.get(i, j) * x[i];
            }
        }
        y
    }

    /// `ln det(L L^T) = 2 sum ln L_ii`.
    pub fn log_det(&self) -> S {
        let mut acc = S::zero();
        for i in 0..self.n {
            acc = acc + self.get(i, i).ln();
        }
        acc + acc
    }
}

fn try_cholesky<S: Scalar>(a: &SymMatrix<S>, jitter: f64) -> Option<Vec<S>> {
    let n = a.n;
    let mut l: Vec<S> = Vec::with_capacity(n * (n + 1) / 2);
    for i in 0..n {
        for j in 0..=i {
            let mut acc = a.get(i, j);
            if i == j && jitter > 0.0 {
                acc = acc + S::constant(jitter);
            }
            let ri = i * (i + 1) / 2;
            let rj = j * (j + 1) / 2;
            for k in 0..j {
                acc = acc - l[ri + k] * l[rj + k];
            }
            if i == j {
                if acc.value() <= 0.0 || !acc.value().is_finite() {
                    return None;
                }
                l.push(acc.sqrt());
            } else {
                l.push(acc / l[rj + j]);
            }
        }
    }
    Some(l)
}

/// Default jitter base: `1e-6` of the mean diagonal.
pub fn default_base_jitter<S: Scalar>(a: &SymMatrix<S>) -> f64 {
    1e-6 * a.mean_diag().abs().max(1e-300)
}

/// Cholesky factorization with an escalating jitter schedule.
///
/// Attempts `A + eps I` for `eps` in `{0, base, 10 base, ..., 10^(max_tries-1) base}`
/// and returns the factor for the first success.
pub fn cholesky_jitter<S: Scalar>(
    a: &SymMatrix<S>,
    base_jitter: f64,
    max_tries: usize,
) -> Result<CholFactor<S>> {
    assert!(base_jitter > 0.0, "base_jitter must be positive");
    let mut jitter = 0.0;
    let mut max_tried = 0.0;
    for attempt in 0..=max_tries {
        if let Some(l) = try_cholesky(a, jitter) {
            return Ok(CholFactor { n: a.n, l, jitter_used: jitter });
        }
        max_tried = jitter;
        jitter = base_jitter * 10f64.powi(attempt as i32);
    }
    Err(Error::NotPositiveDefinite { dim: a.n, max_jitter: max_tried })
}

/// Diagonal Gaussian distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian<S> {
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

impl<S: Scalar> DiagGaussian<S> {
    pub fn new(mean: Vec<S>, var: Vec<S>) -> Self {
        assert_eq!(mean.len(), var.len());
        debug_assert!(var.iter().all(|v| v.value() > 0.0));
        DiagGaussian { mean, var }
    }

    pub fn standard(dim: usize) -> Self {
        DiagGaussian { mean: vec![S::zero(); dim], var: vec![S::one(); dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

pub const LN_2PI: f64 = 1.8378770664093453;

/// `KL(N(q_mean, Lq Lq^T) || N(p_mean, Lp Lp^T))` for full-covariance Gaussians.
pub fn gaussian_kl<S: Scalar>(
    q_mean: &[S],
    q_factor: &CholFactor<S>,
    p_mean: &[S],
    p_factor: &CholFactor<S>,
) -> Result<S> {
    let n = q_mean.len();
    if p_mean.len() != n || q_factor.n != n || p_factor.n != n {
        return Err(Error::DimensionMismatch { expected: n, got: p_mean.len(), context: "gaussian_kl" });
    }
    // tr(Sp^-1 Sq) = |Lp^-1 Lq|_F^2, column by column of Lq.
    let mut trace = S::zero();
    for j in 0..n {
        let mut col = vec![S::zero(); n];
        for i in j..n {
            col[i] = q_factor.get(i, j);
        }
        let w = p_factor.solve_lower(&col);
        trace = trace + dot(&w, &w);
    }
    let diff: Vec<S> = q_mean.iter().zip(p_mean).map(|(&q, &p)| q - p).collect();
    let w = p_factor.solve_lower(&diff);
    let maha = dot(&w, &w);
    let half = S::constant(0.5);
    Ok(half * (trace + maha - S::constant(n as f64) + p_factor.log_det() - q_factor.log_det()))
}

/// Log density of `x` under a diagonal Gaussian, summed over dimensions.
pub fn gaussian_logpdf<S: Scalar>(x: &[S], dist: &DiagGaussian<S>) -> Result<S> {
    if x.len() != dist.dim() {
        return Err(Error::DimensionMismatch { expected: dist.dim(), got: x.len(), context: "gaussian_logpdf" });
    }
    let mut acc = S::zero();
    let half = S::constant(0.5);
    for i in 0..x.len() {
        let d = x[i] - dist.mean[i];
        acc = acc - half * (S::constant(LN_2PI) + dist.var[i].ln() + d * d / dist.var[i]);
    }
    Ok(acc)
}

/// Reparametrized draw `mean + sqrt(var) * eps`.
///
/// Small negative variances (within `1e-12`) are clamped to zero.
pub fn reparam_sample<S: Scalar>(mean: S, var: S, eps: f64) -> Result<S> {
    let v = var.value();
    if v < -1e-12 {
        return Err(Error::NegativeVariance { value: v });
    }
    let var = if v < 0.0 { S::zero() } else { var };
    Ok(mean + var.sqrt() * S::constant(eps))
}
