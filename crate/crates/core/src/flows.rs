//! Element-wise normalizing flows applied to the shared GP output.
//!
//! Two elementary flows are supported: stacked sinh-arcsinh-linear (SAL)
//! layers `u -> alpha * sinh(phi * arcsinh(u) - gamma) + beta`, and the affine
//! flow `u -> alpha * u + beta`. SAL scale parameters are kept in log space so
//! `alpha, phi > 0` guarantees strict monotonicity; the affine flow allows any
//! nonzero `alpha` (a negative scaling is how one output dimension can be an
//! inverted copy of another).

use rand::Rng;

use crate::scalar::Scalar;

/// One SAL layer. `log_alpha` and `log_phi` are unconstrained.
#[derive(Debug, Clone)]
pub struct SalLayer<S> {
    pub log_alpha: S,
    pub beta: S,
    pub gamma: S,
    pub log_phi: S,
}

impl<S: Scalar> SalLayer<S> {
    pub fn new(alpha: f64, beta: f64, gamma: f64, phi: f64) -> Self {
        assert!(alpha > 0.0 && phi > 0.0);
        SalLayer {
            log_alpha: S::constant(alpha.ln()),
            beta: S::constant(beta),
            gamma: S::constant(gamma),
            log_phi: S::constant(phi.ln()),
        }
    }

    pub fn identity() -> Self {
        Self::new(1.0, 0.0, 0.0, 1.0)
    }

    fn forward(&self, u: S) -> S {
        self.log_alpha.exp() * (self.log_phi.exp() * u.asinh() - self.gamma).sinh() + self.beta
    }

    fn inverse(&self, y: S) -> S {
        ((((y - self.beta) * (-self.log_alpha).exp()).asinh() + self.gamma) * (-self.log_phi).exp())
            .sinh()
    }

    /// `ln dG/du = ln alpha + ln phi + ln cosh(phi asinh u - gamma) - 0.5 ln(1 + u^2)`.
    fn log_deriv(&self, u: S) -> S {
        let inner = self.log_phi.exp() * u.asinh() - self.gamma;
        self.log_alpha
            + self.log_phi
            + inner.cosh().ln()
            - S::constant(0.5) * (S::one() + u * u).ln()
    }
}

#[derive(Debug, Clone)]
pub enum FlowKind<S> {
    /// Layers applied in storage order, first layer first.
    Sal(Vec<SalLayer<S>>),
    Linear { alpha: S, beta: S },
}

/// The flow attached to one latent dimension.
#[derive(Debug, Clone)]
pub struct FlowStack<S> {
    pub kind: FlowKind<S>,
}

impl<S: Scalar> FlowStack<S> {
    pub fn sal(layers: Vec<SalLayer<S>>) -> Self {
        assert!(!layers.is_empty());
        FlowStack { kind: FlowKind::Sal(layers) }
    }

    pub fn linear(alpha: f64, beta: f64) -> Self {
        FlowStack { kind: FlowKind::Linear { alpha: S::constant(alpha), beta: S::constant(beta) } }
    }

    /// Near-identity initialization, perturbed by Gaussian noise of std 0.01.
    pub fn init_near_identity(sal_layers: usize, rng: &mut impl Rng) -> Self {
        let mut noise = || 0.01 * crate::data::standard_normal(rng);
        if sal_layers == 0 {
            FlowStack::linear(1.0 + noise(), noise())
        } else {
            FlowStack::sal(
                (0..sal_layers)
                    .map(|_| SalLayer::new((noise()).exp(), noise(), noise(), (noise()).exp()))
                    .collect(),
            )
        }
    }

    pub fn param_count(&self) -> usize {
        match &self.kind {
            FlowKind::Sal(layers) => 4 * layers.len(),
            FlowKind::Linear { .. } => 2,
        }
    }

    pub fn map<T: Scalar>(&self, f: &mut impl FnMut(S) -> T) -> FlowStack<T> {
        let kind = match &self.kind {
            FlowKind::Sal(layers) => FlowKind::Sal(
                layers
                    .iter()
                    .map(|l| SalLayer {
                        log_alpha: f(l.log_alpha),
                        beta: f(l.beta),
                        gamma: f(l.gamma),
                        log_phi: f(l.log_phi),
                    })
                    .collect(),
            ),
            FlowKind::Linear { alpha, beta } => FlowKind::Linear { alpha: f(*alpha), beta: f(*beta) },
        };
        FlowStack { kind }
    }

    pub fn forward(&self, f_tilde: S) -> S {
        match &self.kind {
            FlowKind::Sal(layers) => layers.iter().fold(f_tilde, |u, l| l.forward(u)),
            FlowKind::Linear { alpha, beta } => *alpha * f_tilde + *beta,
        }
    }

    pub fn inverse(&self, y: S) -> S {
        match &self.kind {
            FlowKind::Sal(layers) => layers.iter().rev().fold(y, |u, l| l.inverse(u)),
            FlowKind::Linear { alpha, beta } => (y - *beta) / *alpha,
        }
    }

    /// Log absolute derivative of the composed map at `x`, summed over layers.
    pub fn log_det(&self, x: S) -> S {
        match &self.kind {
            FlowKind::Sal(layers) => {
                let mut u = x;
                let mut acc = S::zero();
                for l in layers {
                    acc = acc + l.log_deriv(u);
                    u = l.forward(u);
                }
                acc
            }
            FlowKind::Linear { alpha, .. } => S::constant(0.5) * (*alpha * *alpha).ln(),
        }
    }
}

/// Cross-covariance of two linear-flow outputs sharing one GP:
/// `Cov[f_d, f_d'] = alpha_d * alpha_d' * k(x, x')`.
pub fn etgp_cross_cov(alpha_d: f64, alpha_dp: f64, k_val: f64) -> f64 {
    alpha_d * alpha_dp * k_val
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn sal1(alpha: f64, beta: f64, gamma: f64, phi: f64) -> FlowStack<f64> {
        FlowStack::sal(vec![SalLayer::new(alpha, beta, gamma, phi)])
    }

    #[test]
    fn identity_sal_layer_is_identity() {
        let f = sal1(1.0, 0.0, 0.0, 1.0);
        assert!((f.forward(0.7) - 0.7).abs() < 1e-15);
        assert!((f.inverse(0.7) - 0.7).abs() < 1e-15);
        assert!(f.log_det(0.0).abs() < 1e-15);
    }

    #[test]
    fn sal_doubling_identity() {
        // sinh(2 asinh(1)) = 2 sinh(asinh 1) cosh(asinh 1) = 2 sqrt(2)
        let f = sal1(1.0, 0.0, 0.0, 2.0);
        assert!((f.forward(1.0) - 2.0 * 2f64.sqrt()).abs() < 1e-12);
        assert!((f.inverse(2.0 * 2f64.sqrt()) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_flow_values() {
        let f = FlowStack::<f64>::linear(2.0, -1.0);
        assert_eq!(f.forward(3.0), 5.0);
        assert_eq!(f.inverse(5.0), 3.0);
        assert!((FlowStack::<f64>::linear(2.0, 0.0).log_det(13.0) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn composed_linear_log_det_sums() {
        // chaining alpha=2 then alpha=3 scales by 6
        let f = FlowStack::<f64>::linear(6.0, 0.0);
        assert!((f.log_det(0.3) - 6f64.ln()).abs() < 1e-15);
        let a = FlowStack::<f64>::linear(2.0, 0.0);
        let b = FlowStack::<f64>::linear(3.0, 0.0);
        let composed = a.log_det(0.3) + b.log_det(a.forward(0.3));
        assert!((composed - 6f64.ln()).abs() < 1e-15);
    }

    fn random_stack(rng: &mut ChaCha8Rng) -> FlowStack<f64> {
        let layers = rng.gen_range(1..=3);
        FlowStack::sal(
            (0..layers)
                .map(|_| {
                    SalLayer::new(
                        rng.gen_range(0.3..3.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(0.5..2.0),
                    )
                })
                .collect(),
        )
    }

    #[test]
    fn round_trip_over_random_stacks() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..1000 {
            let f = random_stack(&mut rng);
            let x = rng.gen_range(-10.0..10.0);
            let y = f.forward(x);
            let back = f.inverse(y);
            assert!((back - x).abs() < 1e-9, "round trip {x} -> {y} -> {back}");
        }
    }

    #[test]
    fn forward_strictly_increasing() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let f = random_stack(&mut rng);
            let mut xs: Vec<f64> = (0..50).map(|_| rng.gen_range(-5.0..5.0)).collect();
            xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let ys: Vec<f64> = xs.iter().map(|&x| f.forward(x)).collect();
            for w in ys.windows(2) {
                assert!(w[1] > w[0]);
            }
        }
    }

    #[test]
    fn log_det_matches_finite_difference() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..200 {
            let f = random_stack(&mut rng);
            let x = rng.gen_range(-3.0..3.0);
            let h = 1e-6;
            let fd = ((f.forward(x + h) - f.forward(x - h)) / (2.0 * h)).abs().ln();
            assert!((f.log_det(x) - fd).abs() < 1e-5, "log_det {} fd {}", f.log_det(x), fd);
        }
    }

    #[test]
    fn etgp_cross_cov_products() {
        assert_eq!(etgp_cross_cov(2.0, 3.0, 0.5), 3.0);
        assert_eq!(etgp_cross_cov(1.0, 1.0, 0.73), 0.73);
        let (alpha, sigma2) = (1.4, 2.2);
        assert!((etgp_cross_cov(alpha, alpha, sigma2) - alpha * alpha * sigma2).abs() < 1e-15);
    }

    #[test]
    fn linear_flow_empirical_moments() {
        // Sample f_tilde ~ N(0, k) and map through two linear flows; the sample
        // covariance must match alpha_d alpha_d' k and the mean must match beta.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let k = 1.7;
        let f1 = FlowStack::<f64>::linear(0.8, 0.4);
        let f2 = FlowStack::<f64>::linear(-1.5, -0.2);
        let n = 100_000;
        let (mut s1, mut s2, mut s11, mut s22, mut s12) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for _ in 0..n {
            let ft = k.sqrt() * crate::data::standard_normal(&mut rng);
            let a = f1.forward(ft);
            let b = f2.forward(ft);
            s1 += a;
            s2 += b;
            s11 += a * a;
            s22 += b * b;
            s12 += a * b;
        }
        let nf = n as f64;
        let (m1, m2) = (s1 / nf, s2 / nf);
        let c11 = s11 / nf - m1 * m1;
        let c22 = s22 / nf - m2 * m2;
        let c12 = s12 / nf - m1 * m2;
        // standard errors: var of mean = c/n; var of covariance approx 2 c^2 / n for Gaussians
        assert!((m1 - 0.4).abs() < 3.0 * (c11 / nf).sqrt());
        assert!((m2 - -0.2).abs() < 3.0 * (c22 / nf).sqrt());
        for (emp, expect) in [
            (c11, etgp_cross_cov(0.8, 0.8, k)),
            (c22, etgp_cross_cov(-1.5, -1.5, k)),
            (c12, etgp_cross_cov(0.8, -1.5, k)),
        ] {
            let se = (2.0 * expect * expect / nf).sqrt().abs().max(1e-6);
            assert!((emp - expect).abs() < 3.0 * se, "cov {emp} vs {expect}");
        }
    }
}
