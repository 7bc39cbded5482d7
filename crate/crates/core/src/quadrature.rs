//! Quadrature rules for expectations over standard Gaussians.
//!
//! Gauss–Hermite is exact for polynomials but converges slowly on `tanh`-type
//! integrands, whose poles sit close to the real axis once the field variance
//! is of order one. The equispaced trapezoid rule converges geometrically for
//! any integrand analytic in a strip, so the saddle-point solvers use that.

use std::f64::consts::PI;

/// Default number of Gauss–Hermite nodes.
pub const DEFAULT_NODES: usize = 40;

/// Step and half-width of [`GaussianRule::fine`].
pub const FINE_STEP: f64 = 0.05;
pub const FINE_HALF_WIDTH: f64 = 12.0;

/// Nodes and weights for `E[g(z)]`, `z ~ N(0, 1)`; the weights sum to one.
///
/// Nodes are stored in mirror pairs (`nodes[k - 1 - i] == -nodes[i]`), and
/// sums run over pairs so odd integrands cancel exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Default for GaussianRule {
    fn default() -> Self {
        Self::gauss_hermite(DEFAULT_NODES)
    }
}

impl GaussianRule {
    /// Equispaced nodes `j * step` on `[-half_width, half_width]` with
    /// Gaussian weights, renormalized to sum to one.
    ///
    /// # Panics
    ///
    /// If `step` or `half_width` is not positive.
    pub fn trapezoid(step: f64, half_width: f64) -> Self {
        assert!(
            step > 0.0 && half_width > 0.0,
            "trapezoid rule needs positive step and width"
        );
        let j_max = (half_width / step).floor() as i64;
        let nodes: Vec<f64> = (-j_max..=j_max).map(|j| j as f64 * step).collect();
        let raw: Vec<f64> = nodes.iter().map(|z| (-0.5 * z * z).exp()).collect();
        let total = pair_sum(&raw, |x| x);
        Self {
            nodes,
            weights: raw.iter().map(|w| w / total).collect(),
        }
    }

    /// The rule used by the mean-field solvers.
    pub fn fine() -> Self {
        Self::trapezoid(FINE_STEP, FINE_HALF_WIDTH)
    }

    /// Builds a `k`-point rule by Newton iteration on the orthonormal Hermite
    /// recurrence, then rescales from the `e^{-x^2}` weight to `N(0, 1)`.
    ///
    /// # Panics
    ///
    /// If `k == 0`.
    pub fn gauss_hermite(k: usize) -> Self {
        assert!(k > 0, "a quadrature rule needs at least one node");
        let pim4 = PI.powf(-0.25);
        let n = k as f64;
        let mut x = vec![0.0; k];
        let mut w = vec![0.0; k];
        let mut z = 0.0f64;
        for i in 0..k.div_ceil(2) {
            z = match i {
                0 => (2.0 * n + 1.0).sqrt() - 1.85575 * (2.0 * n + 1.0).powf(-0.16667),
                1 => z - 1.14 * n.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..k {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * n).sqrt() * p2;
                let step = p1 / pp;
                z -= step;
                if step.abs() <= 1e-15 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[k - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[k - 1 - i] = w[i];
        }
        let scale = PI.sqrt();
        Self {
            nodes: x.iter().map(|v| v * std::f64::consts::SQRT_2).collect(),
            weights: w.iter().map(|v| v / scale).collect(),
        }
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// `E[g(z)]`.
    pub fn expect(&self, mut g: impl FnMut(f64) -> f64) -> f64 {
        let k = self.nodes.len();
        let mut total = 0.0;
        for i in 0..k / 2 {
            total += self.weights[i] * (g(self.nodes[i]) + g(self.nodes[k - 1 - i]));
        }
        if k % 2 == 1 {
            total += self.weights[k / 2] * g(self.nodes[k / 2]);
        }
        total
    }

    /// `E[g(z, y)]` for independent standard Gaussians (tensor product).
    pub fn expect2(&self, mut g: impl FnMut(f64, f64) -> f64) -> f64 {
        self.expect(|z| self.expect(|y| g(z, y)))
    }

    /// `e^{-b^2/2} E[cosh(b t) g(t)]`, evaluated as the equal mixture of
    /// `N(b, 1)` and `N(-b, 1)` so no `cosh` is ever formed.
    pub fn expect_cosh_tilted(&self, b: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        0.5 * self.expect(|z| g(z + b) + g(z - b))
    }

    /// `e^{-b^2/2} E[sinh(b t) g(t)]` via the same two shifted Gaussians.
    pub fn expect_sinh_tilted(&self, b: f64, mut g: impl FnMut(f64) -> f64) -> f64 {
        0.5 * self.expect(|z| g(z + b) - g(z - b))
    }
}

fn pair_sum(values: &[f64], f: impl Fn(f64) -> f64) -> f64 {
    let k = values.len();
    let mut total: f64 = (0..k / 2).map(|i| f(values[i]) + f(values[k - 1 - i])).sum();
    if k % 2 == 1 {
        total += f(values[k / 2]);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial(k: u32) -> f64 {
        (1..=k).rev().step_by(2).map(f64::from).product()
    }

    #[test]
    fn gaussian_moments() {
        let rule = GaussianRule::default();
        assert_eq!(rule.len(), 40);
        for p in 0..=8u32 {
            let got = rule.expect(|z| z.powi(p as i32));
            let want = if p % 2 == 1 {
                0.0
            } else {
                double_factorial(p.saturating_sub(1))
            };
            assert!((got - want).abs() < 1e-10, "moment {p}: {got} vs {want}");
        }
        for k in [20, 21, 64] {
            let r = GaussianRule::gauss_hermite(k);
            assert!((r.expect(|_| 1.0) - 1.0).abs() < 1e-12);
            assert!((r.expect(|z| z * z) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn trapezoid_rule_handles_tanh_integrands() {
        // E tanh(m + sqrt(m) z) = E tanh^2(m + sqrt(m) z) for every m >= 0
        let rule = GaussianRule::fine();
        for m in [0.3f64, 1.2, 3.0, 10.0] {
            let a = rule.expect(|z| (m + m.sqrt() * z).tanh());
            let b = rule.expect(|z| (m + m.sqrt() * z).tanh().powi(2));
            assert!((a - b).abs() < 1e-13, "m={m}: {a} vs {b}");
        }
        for p in [0, 2, 4, 8] {
            let want = double_factorial((p as u32).saturating_sub(1));
            assert!((rule.expect(|z| z.powi(p)) - want).abs() < 1e-10);
        }
        assert_eq!(rule.expect(|z| (0.7 * z).tanh()), 0.0);
    }

    #[test]
    fn tilted_measure_matches_direct_polynomials() {
        let rule = GaussianRule::default();
        for b in [0.3, 1.0, 1.7] {
            for deg in 0..=6 {
                let g = |t: f64| t.powi(deg) - 0.5 * t + 0.25;
                let direct = (-b * b / 2.0f64).exp() * rule.expect(|t| (b * t).cosh() * g(t));
                let mixed = rule.expect_cosh_tilted(b, g);
                assert!((direct - mixed).abs() < 1e-10, "b={b} deg={deg}");
                let direct_s = (-b * b / 2.0f64).exp() * rule.expect(|t| (b * t).sinh() * g(t));
                assert!((direct_s - rule.expect_sinh_tilted(b, g)).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn quadratic_identity_of_the_tilted_measure() {
        // E_tilted[(q t + sqrt(r - q^2) y)^2] = b^2 q^2 + r
        let rule = GaussianRule::default();
        let mut rng = crate::rng::stream(11, 0);
        use rand::Rng;
        for _ in 0..20 {
            let b: f64 = rng.random_range(0.1..2.0);
            let r: f64 = rng.random_range(0.0..1.0);
            let q: f64 = rng.random_range(-1.0..1.0) * r.sqrt();
            let got = 0.5
                * rule.expect2(|z, y| {
                    let s = (r - q * q).sqrt();
                    (q * (z + b) + s * y).powi(2) + (q * (z - b) + s * y).powi(2)
                });
            assert!((got - (b * b * q * q + r)).abs() < 1e-8);
        }
    }
}
