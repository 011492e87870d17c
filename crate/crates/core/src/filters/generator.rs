//! Generator of the slow equation applied to registered test functions.

use super::TestFunction;
use crate::error::Result;
use crate::model::ModelSpec;

/// (L psi)(x, z) with the slow drift b1(x, z).
pub fn generator_apply(model: &ModelSpec, psi: TestFunction, x: f64, z: f64) -> Result<f64> {
    generator_with_drift(model, psi, x, model.b1(x, z))
}

/// psi' drift + (1/2) psi'' (sigma0^2 + sigma1^2)
/// + int [psi(x + f1) - psi(x) - psi' f1] nu1(du).
pub fn generator_with_drift(
    model: &ModelSpec,
    psi: TestFunction,
    x: f64,
    drift: f64,
) -> Result<f64> {
    let (v, d1, d2) = psi.jet(x)?;
    let s0 = model.sigma_b(x);
    let s1 = model.sigma_v(x);
    let mut out = d1 * drift + 0.5 * d2 * (s0 * s0 + s1 * s1);
    if model.has_slow_jumps() {
        out += model.nu1().integrate(|u| {
            let f = model.f1(x, u);
            psi.value(x + f) - v - d1 * f
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Family, ModelSpec};

    #[test]
    fn constant_and_linear_functions() {
        let m = ModelSpec::default_of(Family::LevyCorrelated);
        for &(x, z) in &[(0.3, -0.2), (-1.0, 2.0)] {
            assert_eq!(generator_apply(&m, TestFunction::One, x, z).unwrap(), 0.0);
            let l = generator_apply(&m, TestFunction::Linear, x, z).unwrap();
            assert!((l - m.b1(x, z)).abs() < 1e-14);
        }
    }

    #[test]
    fn square_picks_up_all_second_moments() {
        let mut p = ModelSpec::default_of(Family::LevyCorrelated).params;
        p.theta = 0.0;
        p.q = 0.0;
        p.c1 = 0.7;
        let m = ModelSpec::from_params(Family::LevyCorrelated, p.clone()).unwrap();
        let expect = p.sigma0.powi(2) + p.sigma1.powi(2) + p.nu1.rate * p.c1 * p.c1 / 3.0;
        let got = generator_apply(&m, TestFunction::Square, 0.4, 0.0).unwrap();
        assert!((got - expect).abs() < 1e-13, "{got} vs {expect}");
    }
}
