//! Beta action distribution on `(0, 1)` and the special functions it needs.

use rand::Rng;
use rand_distr::Distribution;
use statrs::function::gamma::{digamma, ln_gamma};

/// Offset keeping both shape parameters strictly above one.
pub const SHAPE_FLOOR: f64 = 1e-6;

/// Sampled actions are kept this far from the support boundary so that
/// the log-density stays finite.
pub const ACTION_EPS: f64 = 1e-9;

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// ψ′(x) for x > 0: recurrence up to x ≥ 6, then the asymptotic series.
pub fn trigamma(x: f64) -> f64 {
    let mut x = x;
    let mut acc = 0.0;
    while x < 12.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    // 1/x + 1/2x² + Σ B_2k / x^(2k+1)
    let tail = r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 * (1.0 / 30.0 - r2 * (5.0 / 66.0)))));
    acc + r + 0.5 * r2 + r * tail
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaParams {
    pub a: f64,
    pub b: f64,
}

impl BetaParams {
    /// Maps raw head outputs to shapes `1 + 1e-6 + softplus(z)`.
    pub fn from_logits(z: [f64; 2]) -> Self {
        Self {
            a: 1.0 + SHAPE_FLOOR + softplus(z[0]),
            b: 1.0 + SHAPE_FLOOR + softplus(z[1]),
        }
    }

    /// `∂a/∂z0`, `∂b/∂z1`.
    pub fn logit_jacobian(z: [f64; 2]) -> [f64; 2] {
        [sigmoid(z[0]), sigmoid(z[1])]
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    pub fn mode(&self) -> f64 {
        (self.a - 1.0) / (self.a + self.b - 2.0)
    }

    fn ln_beta(&self) -> f64 {
        ln_gamma(self.a) + ln_gamma(self.b) - ln_gamma(self.a + self.b)
    }

    pub fn log_prob(&self, x: f64) -> f64 {
        (self.a - 1.0) * x.ln() + (self.b - 1.0) * (-x).ln_1p() - self.ln_beta()
    }

    /// `(∂/∂a, ∂/∂b)` of [`Self::log_prob`].
    pub fn grad_log_prob(&self, x: f64) -> [f64; 2] {
        let dab = digamma(self.a + self.b);
        [x.ln() - digamma(self.a) + dab, (-x).ln_1p() - digamma(self.b) + dab]
    }

    pub fn entropy(&self) -> f64 {
        let (a, b) = (self.a, self.b);
        self.ln_beta() - (a - 1.0) * digamma(a) - (b - 1.0) * digamma(b) + (a + b - 2.0) * digamma(a + b)
    }

    pub fn grad_entropy(&self) -> [f64; 2] {
        let (a, b) = (self.a, self.b);
        let t = (a + b - 2.0) * trigamma(a + b);
        [t - (a - 1.0) * trigamma(a), t - (b - 1.0) * trigamma(b)]
    }

    /// Draw clamped to `[ACTION_EPS, 1 - ACTION_EPS]`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let d = rand_distr::Beta::new(self.a, self.b).expect("shape parameters are > 1");
        let x: f64 = d.sample(rng);
        x.clamp(ACTION_EPS, 1.0 - ACTION_EPS)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    #[test]
    fn trigamma_known_values() {
        // ψ′(1) = π²/6, ψ′(1/2) = π²/2
        let pi2 = std::f64::consts::PI.powi(2);
        approx::assert_relative_eq!(trigamma(1.0), pi2 / 6.0, max_relative = 1e-13);
        approx::assert_relative_eq!(trigamma(0.5), pi2 / 2.0, max_relative = 1e-13);
        // recurrence ψ′(x+1) = ψ′(x) − 1/x²
        for x in [0.3, 1.7, 4.2, 9.9, 40.0] {
            approx::assert_relative_eq!(trigamma(x + 1.0), trigamma(x) - 1.0 / (x * x), max_relative = 1e-12);
        }
    }

    #[test]
    fn trigamma_is_derivative_of_digamma() {
        for x in [1.1, 2.5, 7.0, 30.0] {
            let h = 1e-5;
            let fd = (digamma(x + h) - digamma(x - h)) / (2.0 * h);
            approx::assert_relative_eq!(trigamma(x), fd, max_relative = 1e-6);
        }
    }

    #[test]
    fn mode_formula() {
        assert_eq!(BetaParams { a: 2.0, b: 2.0 }.mode(), 0.5);
        approx::assert_abs_diff_eq!(BetaParams { a: 3.0, b: 2.0 }.mode(), 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn log_prob_matches_density() {
        // Beta(2, 3) density is 12 x (1-x)^2
        let p = BetaParams { a: 2.0, b: 3.0 };
        for x in [0.1, 0.4, 0.77] {
            let dens: f64 = 12.0 * x * (1.0 - x) * (1.0 - x);
            approx::assert_abs_diff_eq!(p.log_prob(x), dens.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn analytic_gradients_match_finite_differences() {
        let h = 1e-6;
        for (a, b, x) in [(1.5, 2.5, 0.3), (4.0, 1.2, 0.9), (10.0, 30.0, 0.2)] {
            let p = BetaParams { a, b };
            let g = p.grad_log_prob(x);
            let ge = p.grad_entropy();
            let pa = |d: f64| BetaParams { a: a + d, b };
            let pb = |d: f64| BetaParams { a, b: b + d };
            let fa = (pa(h).log_prob(x) - pa(-h).log_prob(x)) / (2.0 * h);
            let fb = (pb(h).log_prob(x) - pb(-h).log_prob(x)) / (2.0 * h);
            approx::assert_relative_eq!(g[0], fa, max_relative = 1e-6, epsilon = 1e-9);
            approx::assert_relative_eq!(g[1], fb, max_relative = 1e-6, epsilon = 1e-9);
            let ea = (pa(h).entropy() - pa(-h).entropy()) / (2.0 * h);
            let eb = (pb(h).entropy() - pb(-h).entropy()) / (2.0 * h);
            approx::assert_relative_eq!(ge[0], ea, max_relative = 1e-5, epsilon = 1e-9);
            approx::assert_relative_eq!(ge[1], eb, max_relative = 1e-5, epsilon = 1e-9);
        }
    }

    #[test]
    fn logits_keep_shapes_above_one() {
        for z in [-1e3, -50.0, 0.0, 50.0] {
            let p = BetaParams::from_logits([z, -z]);
            assert!(p.a >= 1.0 + SHAPE_FLOOR && p.b >= 1.0 + SHAPE_FLOOR);
            assert!((0.0..=1.0).contains(&p.mode()));
        }
    }

    #[test]
    fn skewed_shape_concentrates_near_zero() {
        let p = BetaParams { a: 1.0 + SHAPE_FLOOR, b: 500.0 };
        let mut rng = substream(9, 0);
        let mean = (0..2000).map(|_| p.sample(&mut rng)).sum::<f64>() / 2000.0;
        assert!(mean < 0.01, "{mean}");
    }
}
