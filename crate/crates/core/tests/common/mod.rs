//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use slowfast::model::{ModelSpec, ParamValue};

/// Scalar linear-Gaussian model with a point-mass start:
/// X_{k+1} = X_k + s dV_k, dY_k = X_k dt + dB_k.
/// Returns the exact discrete-time Kalman mean and variance of X_N given
/// dY_0 .. dY_{N-1}.
pub fn discrete_kalman(x0: f64, s: f64, dy: &[f64], dt: f64) -> (f64, f64) {
    let (mut m, mut p) = (x0, 0.0);
    for &d in dy {
        let gain = p * dt / (p * dt * dt + dt);
        m += gain * (d - m * dt);
        p *= 1.0 - gain * dt;
        p += s * s * dt;
    }
    (m, p)
}

/// Continuous Kalman-Bucy variance for the same model: P' = s^2 - P^2, P(0) = 0.
pub fn kalman_bucy_variance(s: f64, t: f64) -> f64 {
    s * (s * t).tanh()
}

/// E tanh(z) for z ~ N(m, v), by composite Simpson on +-12 sd.
pub fn gaussian_expect(m: f64, v: f64, f: impl Fn(f64) -> f64) -> f64 {
    let sd = v.sqrt();
    let n = 4000;
    let (a, b) = (m - 12.0 * sd, m + 12.0 * sd);
    let h = (b - a) / n as f64;
    let pdf = |x: f64| (-(x - m).powi(2) / (2.0 * v)).exp() / (2.0 * std::f64::consts::PI * v).sqrt();
    let mut s = 0.0;
    for i in 0..=n {
        let x = a + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        s += w * pdf(x) * f(x);
    }
    s * h / 3.0
}

pub fn overrides(pairs: &[(&str, f64)]) -> BTreeMap<String, ParamValue> {
    pairs
        .iter()
        .map(|(k, v)| (k.to_string(), ParamValue::Num(*v)))
        .collect()
}

/// analytic-ou reduced to a driftless Brownian slow component.
pub fn brownian_signal(sigma1: f64) -> ModelSpec {
    ModelSpec::catalog(
        "analytic-ou",
        &overrides(&[("theta", 0.0), ("q", 0.0), ("c1", 0.0), ("sigma1", sigma1), ("x0", 0.0)]),
    )
    .unwrap()
}

/// Exact averaged drift for analytic-ou: q c tanh x + theta sin x.
pub fn analytic_ou_bbar(q: f64, c: f64, theta: f64, x: f64) -> f64 {
    q * c * x.tanh() + theta * x.sin()
}

/// One linear-Gaussian filtering run: returns (particle posterior mean of
/// X_T, exact discrete Kalman mean) on a shared observation path.
pub fn kalman_case(seed: u64, particles: usize) -> (f64, f64) {
    use slowfast::averaging::ClosedFormDrift;
    use slowfast::filters::observation::{simulate_observation_sensor, ObsFn, SensorObservationModel};
    use slowfast::filters::particle::{particle_filter_sensor, FilterConfig, FilterMode, InitialLaw};
    use slowfast::filters::TestFunction;
    use slowfast::kernel::TimeGrid;
    use slowfast::rng::SeedSpec;
    use slowfast::sde::{simulate_homogenized, NoiseBundle};

    let s = 0.5;
    let model = brownian_signal(s);
    let drift = ClosedFormDrift::new(model.clone());
    let grid = TimeGrid::new(1.0, 1000).unwrap();
    let root = SeedSpec::new(seed);
    let noise = NoiseBundle::sample(&model, 0.1, grid, &root.child(0)).unwrap();
    let path = simulate_homogenized(&model, &drift, grid, &noise.v, &noise.b, &noise.j1).unwrap();
    let obs = SensorObservationModel::scalar(ObsFn::Clipped(10.0), 0.0).unwrap();
    let y = simulate_observation_sensor(&path.x, &noise.v, &noise.b, &obs).unwrap();
    let mut cfg = FilterConfig::new(particles, InitialLaw::PointMass(0.0));
    cfg.phis = vec![TestFunction::Linear];
    let trace = particle_filter_sensor(&y, &model, FilterMode::Homogenized(&drift), &obs, &cfg, &root.child(1)).unwrap();
    let (m, _) = discrete_kalman(0.0, s, &y.dy, grid.dt());
    (trace.last(0), m)
}
