mod common;

use slowfast::averaging::{averaged_drift, EstimatorConfig};
use slowfast::filters::metrics::inverse_moment_check;
use slowfast::filters::observation::{
    simulate_observation_levy, simulate_observation_sensor, LambdaFn, LevyObservationModel, ObsFn,
    SensorObservationModel,
};
use slowfast::averaging::ClosedFormDrift;
use slowfast::filters::particle::InitialLaw;
use slowfast::filters::TestFunction;
use slowfast::harness::fit_loglog_slope;
use slowfast::kernel::{sample_brownian, sample_thinning_proposals, JumpMeasure, MarkLaw, MarkRegion, TimeGrid};
use slowfast::model::{Family, ModelSpec};
use slowfast::rng::{std_normal, SeedSpec};
use slowfast::sde::{simulate_homogenized, NoiseBundle};
use slowfast::stats::Estimate;
use slowfast::zakai::{DensityGrid, FdScheme, ObservationForm, ZakaiSolver};

#[test]
fn discrete_kalman_variance_tracks_riccati() {
    let dt = 1e-3;
    let (_, p) = common::discrete_kalman(0.0, 0.5, &vec![0.0; 1000], dt);
    assert!((p - common::kalman_bucy_variance(0.5, 1.0)).abs() < 2e-3, "{p}");
}

#[test]
fn particle_filter_matches_kalman_mean() {
    for seed in [1, 2, 3] {
        let (pf, kf) = common::kalman_case(seed, 4000);
        assert!((pf - kf).abs() < 0.05, "seed {seed}: particle {pf} vs Kalman {kf}");
    }
}

#[test]
fn analytic_ou_drift_matches_closed_form() {
    let model = ModelSpec::default_of(Family::AnalyticOu);
    let p = &model.params;
    let cfg = EstimatorConfig::default();
    for (i, x) in [-2.5, -1.0, 0.0, 0.7, 2.0].into_iter().enumerate() {
        let e = averaged_drift(&model, x, &cfg, &SeedSpec::new(40).child(i as u64)).unwrap();
        let exact = common::analytic_ou_bbar(p.q, p.c, p.theta, x);
        assert!((e.mean - exact).abs() <= (3.0 * e.se).max(1e-2), "x = {x}: {} vs {exact}", e.mean);
    }
}

#[test]
fn thinning_accepts_at_half_rate() {
    let obs = LevyObservationModel::new(
        ObsFn::Zero,
        LambdaFn { base: 0.5, amp: 0.0 },
        JumpMeasure::new(4.0, MarkLaw::Uniform).unwrap(),
        MarkRegion::ALL,
        1.0,
        0.0,
        0.0,
    )
    .unwrap();
    let grid = TimeGrid::new(1.0, 100).unwrap();
    let x = vec![0.0; 101];
    let counts: Vec<f64> = (0..10_000u64)
        .map(|r| {
            let s = SeedSpec::new(5).child(r);
            let v = sample_brownian(grid, 1, &s.child(0)).unwrap();
            let props = sample_thinning_proposals(grid, obs.nu3, &s.child(1)).unwrap();
            simulate_observation_levy(&x, &v, &props, &obs).unwrap().events.len() as f64
        })
        .collect();
    let e = Estimate::from_samples(&counts);
    assert!(e.agrees_with(2.0, 3.0), "{} +- {}", e.mean, e.se);
}

#[test]
fn sensor_observation_has_unit_quadratic_variation() {
    let model = ModelSpec::default_of(Family::AnalyticOu);
    let grid = TimeGrid::new(1.0, 10_000).unwrap();
    let noise = NoiseBundle::sample(&model, 0.1, grid, &SeedSpec::new(8)).unwrap();
    let drift = ClosedFormDrift::new(model.clone());
    let path = simulate_homogenized(&model, &drift, grid, &noise.v, &noise.b, &noise.j1).unwrap();
    let obs = SensorObservationModel::scalar(ObsFn::ScaledTanh(0.5), 0.6).unwrap();
    let y = simulate_observation_sensor(&path.x, &noise.v, &noise.b, &obs).unwrap();
    let qv: f64 = y.dy.iter().map(|d| d * d).sum();
    assert!((qv - 1.0).abs() < 0.05, "{qv}");
}

#[test]
fn noisy_cube_root_data_has_covering_interval() {
    let mut rng = SeedSpec::new(13).rng();
    let pts: Vec<(f64, f64, f64)> = [0.1, 0.05, 0.02, 0.01, 0.005]
        .iter()
        .map(|&e: &f64| {
            let v = e.powf(1.0 / 3.0);
            (e, v * (1.0 + 0.05 * std_normal(&mut rng)), 0.05 * v)
        })
        .collect();
    let fit = fit_loglog_slope(&pts).unwrap();
    assert!(fit.ci_contains(1.0 / 3.0), "{fit:?}");
}

#[test]
fn inverse_moment_bound_squares_when_horizon_doubles() {
    let a = inverse_moment_check(&[0.0], 2.0, 0.5, 1.0);
    let b = inverse_moment_check(&[0.0], 2.0, 0.5, 2.0);
    assert!((a.bound - 3.955).abs() < 1e-3);
    assert!((b.bound - a.bound * a.bound).abs() < 1e-9);
    assert_eq!(inverse_moment_check(&[0.0; 4], 3.0, 0.0, 1.0).estimate.mean, 1.0);
}

/// Without observation increments the Euler-form solver is the Fokker-Planck
/// equation of the averaged signal; compare with a Monte Carlo histogram.
#[test]
fn silent_grid_solver_matches_monte_carlo_marginal() {
    let model = ModelSpec::catalog("levy-correlated", &common::overrides(&[("c1", 0.0)])).unwrap();
    let drift = ClosedFormDrift::new(model.clone());
    let silent = LevyObservationModel::new(
        ObsFn::Zero,
        LambdaFn { base: 1.0, amp: 0.0 },
        JumpMeasure::new(1.0, MarkLaw::Uniform).unwrap(),
        MarkRegion::ALL,
        1.0,
        0.0,
        0.0,
    )
    .unwrap();
    let init = InitialLaw::Normal { mean: model.params.x0, sd: 0.25 };
    let grid = TimeGrid::new(1.0, 500).unwrap();
    let mut state = DensityGrid::new(-4.0, 6.0, 400, init).unwrap();
    let solver = ZakaiSolver::with_form(&model, &drift, &silent, &state, grid.dt(), FdScheme::Implicit, ObservationForm::Euler).unwrap();
    for _ in 0..grid.steps() {
        solver.step(&mut state, 0.0).unwrap();
    }

    let bins = 40;
    let (lo, hi) = (-4.0, 6.0);
    let width = (hi - lo) / bins as f64;
    let n = 20_000u64;
    let mut hist = vec![0.0; bins];
    for r in 0..n {
        let s = SeedSpec::new(21).child(r);
        let mut p = model.params.clone();
        p.x0 += 0.25 * std_normal(&mut s.child(9).rng());
        let m = ModelSpec::from_params(Family::LevyCorrelated, p).unwrap();
        let noise = NoiseBundle::sample(&m, 0.1, grid, &s).unwrap();
        let path = simulate_homogenized(&m, &drift, grid, &noise.v, &noise.b, &noise.j1).unwrap();
        let b = ((path.x[grid.steps()] - lo) / width).floor();
        if b >= 0.0 && (b as usize) < bins {
            hist[b as usize] += 1.0 / n as f64;
        }
    }
    let mass = state.mass();
    let tv: f64 = (0..bins)
        .map(|j| {
            let (a, b) = (lo + j as f64 * width, lo + (j + 1) as f64 * width);
            let fd = state.integrate(|x| if x >= a && x < b { 1.0 } else { 0.0 }) / mass;
            (fd - hist[j]).abs()
        })
        .sum::<f64>()
        / 2.0;
    assert!(tv <= 0.05, "total variation {tv}");
}

#[test]
fn grid_estimates_stay_bounded_without_clipping() {
    let obs = LevyObservationModel::catalog();
    let model = ModelSpec::catalog("levy-correlated", &common::overrides(&[("c1", 0.0)])).unwrap();
    let drift = ClosedFormDrift::new(model.clone());
    let s = DensityGrid::new(-4.0, 6.0, 400, InitialLaw::Normal { mean: 0.5, sd: 0.25 }).unwrap();
    let solver = ZakaiSolver::new(&model, &drift, &obs, &s, 1e-3, FdScheme::Implicit).unwrap();
    let mut st = s.clone();
    for k in 0..200 {
        solver.step(&mut st, if k % 2 == 0 { 0.03 } else { -0.03 }).unwrap();
    }
    let t = slowfast::zakai::fd_filter_estimate(&st, TestFunction::Tanh).unwrap();
    assert!(t.abs() < 1.0);
    assert_eq!(st.clipped, 0);
}
