//! Gaussian quadrature rules (Legendre and Hermite), computed by Newton
//! iteration on the three-term recurrences.

use std::f64::consts::PI;
use std::sync::OnceLock;

#[derive(Clone, Debug)]
pub struct QuadratureRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Legendre rule on [-1, 1].
    pub fn gauss_legendre(n: usize) -> Self {
        assert!(n >= 1);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = 1.0;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j - 1) as f64 * z * p2 - (j - 1) as f64 * p3) / j as f64;
                }
                pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() < 1e-15 {
                    break;
                }
            }
            nodes[i] = -z;
            nodes[n - 1 - i] = z;
            let w = 2.0 / ((1.0 - z * z) * pp * pp);
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        Self { nodes, weights }
    }

    /// Gauss–Hermite rule for the weight exp(-x^2) on the real line.
    pub fn gauss_hermite(n: usize) -> Self {
        assert!(n >= 1);
        let pim4 = PI.powf(-0.25);
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        let mut z = 0.0f64;
        for i in 0..m {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..200 {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        // Newton ran from the largest root down; store ascending.
        nodes.reverse();
        weights.reverse();
        Self { nodes, weights }
    }

    /// Integral of `f` over [a, b] with a Legendre rule.
    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mid + half * x))
            .sum::<f64>()
            * half
    }

    /// E f(G) for G ~ Normal(mean, sd^2) with a Hermite rule.
    pub fn expect_normal(&self, mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let scale = std::f64::consts::SQRT_2 * sd;
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(mean + scale * x))
            .sum::<f64>()
            / PI.sqrt()
    }
}

pub fn legendre_64() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_legendre(64))
}

pub fn hermite_64() -> &'static QuadratureRule {
    static RULE: OnceLock<QuadratureRule> = OnceLock::new();
    RULE.get_or_init(|| QuadratureRule::gauss_hermite(64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = QuadratureRule::gauss_legendre(8);
        // degree 15 is the exactness limit for 8 nodes
        let v = rule.integrate(0.0, 2.0, |x| x.powi(15));
        assert!((v - 2f64.powi(16) / 16.0).abs() < 1e-9);
        assert!((rule.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_64_moments() {
        let rule = hermite_64();
        assert!((rule.weights.iter().sum::<f64>() - PI.sqrt()).abs() < 1e-12);
        let m2 = rule.expect_normal(0.0, 1.0, |x| x * x);
        let m4 = rule.expect_normal(0.0, 1.0, |x| x.powi(4));
        let m1 = rule.expect_normal(1.5, 2.0, |x| x);
        assert!((m2 - 1.0).abs() < 1e-12);
        assert!((m4 - 3.0).abs() < 1e-11);
        assert!((m1 - 1.5).abs() < 1e-12);
        // nodes ascending and symmetric
        for w in rule.nodes.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!((rule.nodes[0] + rule.nodes[63]).abs() < 1e-12);
    }

    #[test]
    fn hermite_matches_cosine_closed_form() {
        // E cos(G) = exp(-sd^2/2) cos(mean)
        let v = hermite_64().expect_normal(0.3, 0.7, f64::cos);
        let exact = (-0.49f64 / 2.0).exp() * 0.3f64.cos();
        assert!((v - exact).abs() < 1e-13);
    }
}
