//! Experiment runners. Replication r of sweep point i always runs on seed
//! path (i, r), so reports do not depend on the thread count.

use std::time::Instant;

use rayon::prelude::*;

use super::config::{DriftSource, ExperimentConfig, ExperimentKind};
use super::report::ExperimentReport;
use super::slope::fit_loglog_slope;
use crate::averaging::{
    averaged_drift, build_drift_cache, uniform_nodes, ClosedFormDrift, DriftEvaluator,
};
use crate::error::{config_err, Error, Result};
use crate::filters::metrics::{
    filter_l1_distance, inverse_moment_check, weak_filter_distance, FilterExperiment, Replicates,
};
use crate::filters::observation::{simulate_observation_levy, simulate_observation_sensor};
use crate::filters::particle::{particle_filter_levy, FilterConfig, FilterMode, InitialLaw};
use crate::filters::residual::{zakai_residual_check, QvCorrection};
use crate::filters::weights::{girsanov_weight_sensor, likelihood_levy};
use crate::filters::TestFunction;
use crate::kernel::{sample_thinning_proposals, TimeGrid};
use crate::model::{Family, ModelSpec};
use crate::rng::SeedSpec;
use crate::sde::{
    simulate_auxiliary, simulate_homogenized, simulate_slow_fast, strong_error, stream,
    sup_sq_distance, NoiseBundle, PathPair,
};
use crate::stats::{non_increasing_within, Estimate};
use crate::zakai::{fd_filter_estimate, DensityGrid, ZakaiSolver};

/// Fraction of replications allowed to abort on a non-finite state.
pub const ABORT_QUOTA: f64 = 1e-3;
/// Fraction of filter replications allowed to lose all weight.
pub const DEGENERACY_QUOTA: f64 = 1e-2;
/// Slope window for the strong-convergence sweep.
pub const SLOPE_WINDOW: (f64, f64) = (0.25, 1.5);
/// Largest allowed max/min spread of the auxiliary-process ratio.
pub const AUX_SPREAD_LIMIT: f64 = 5.0;
/// Particle versus grid-solver budget at the horizon.
pub const CROSSCHECK_BUDGET: f64 = 0.05;
/// Residual-halving window: ratio of the fine to the coarse residual.
pub const HALVING_WINDOW: (f64, f64) = (0.35, 0.65);
/// Residual budget on the fine grid.
pub const RESIDUAL_BUDGET: f64 = 0.05;
/// Ceiling for the z-independent L1 distance.
pub const DEGENERATE_L1_CEILING: f64 = 0.02;

/// Stream path prefixes per experiment, so different kinds never share noise.
mod prefix {
    pub const STRONG: u64 = 1;
    pub const FILTER: u64 = 3;
    pub const WEAK: u64 = 4;
    pub const ZAKAI: u64 = 5;
    pub const INVARIANT: u64 = 6;
    pub const DRIFT: u64 = 7;
}

pub fn run(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut report = match cfg.kind {
        ExperimentKind::StrongConvergence => run_strong_convergence(cfg),
        ExperimentKind::AuxScaling => run_aux_scaling(cfg),
        ExperimentKind::FilterL1 => run_filter_l1(cfg),
        ExperimentKind::FilterWeak => run_filter_weak(cfg),
        ExperimentKind::ZakaiCrosscheck => run_zakai_crosscheck(cfg),
        ExperimentKind::InvariantSuite => run_invariant_suite(cfg),
    }?;
    report.wall_clock_secs = start.elapsed().as_secs_f64();
    Ok(report)
}

/// The averaged drift the configuration asks for.
pub fn build_drift(cfg: &ExperimentConfig, model: &ModelSpec) -> Result<Box<dyn DriftEvaluator>> {
    if !(model.params.kappa > 0.0) {
        return config_err("averaging needs kappa > 0");
    }
    Ok(match cfg.drift.source {
        DriftSource::Reference => Box::new(ClosedFormDrift::new(model.clone())),
        DriftSource::Cache => {
            let nodes = uniform_nodes(cfg.drift.lo, cfg.drift.hi, cfg.drift.nodes)?;
            let seed = SeedSpec::with_path(cfg.seed, &[prefix::DRIFT]);
            let mut cache = build_drift_cache(model, nodes, cfg.estimator(), &seed, None)?;
            cache.interpolation = cfg.drift.interpolation;
            Box::new(cache)
        }
    })
}

/// Runs `f` for r in 0..reps on `seed / r`, in parallel, keeping order.
/// Divergences and weight collapses are counted instead of propagated.
pub fn replicate<T: Send>(
    reps: usize,
    seed: &SeedSpec,
    f: impl Fn(&SeedSpec) -> Result<T> + Sync,
) -> Result<(Vec<T>, usize, usize)> {
    let results: Vec<Result<T>> = (0..reps)
        .into_par_iter()
        .map(|r| f(&seed.child(r as u64)))
        .collect();
    let mut out = Vec::with_capacity(reps);
    let (mut aborts, mut degenerate) = (0, 0);
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(v) => out.push(v),
            Err(Error::Divergence { step }) => {
                log::warn!("replication {r} diverged at step {step}");
                aborts += 1;
            }
            Err(Error::Degeneracy { step }) => {
                log::warn!("replication {r}: weights collapsed at step {step}");
                degenerate += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok((out, aborts, degenerate))
}

fn enforce_quota(what: &str, failed: usize, total: usize, quota: f64) -> Result<()> {
    if failed as f64 > quota * total as f64 {
        return Err(Error::Experiment(format!(
            "{what}: {failed} of {total} replications failed (quota {:.1}%)",
            quota * 100.0
        )));
    }
    Ok(())
}

fn check_replicates(eps: f64, r: &Replicates) -> Result<()> {
    let total = r.requested();
    enforce_quota(&format!("eps = {eps}"), r.aborts, total, ABORT_QUOTA)?;
    enforce_quota(&format!("eps = {eps} (filter degeneracy)"), r.degenerate, total, DEGENERACY_QUOTA)
}

/// Shape of the strong-error bound eps/delta + (delta + 1) delta + (delta + 1) delta^2 / eps,
/// without its unknown constants.
pub fn bound_shape(eps: f64, delta: f64) -> f64 {
    eps / delta + (delta + 1.0) * delta + (delta + 1.0) * delta * delta / eps
}

/// One coupled replication: original and averaged slow paths on shared
/// noise, plus the auxiliary fast process.
pub struct CoupledRun {
    pub original: PathPair,
    pub averaged: PathPair,
    pub aux_sup_sq: f64,
}

pub fn coupled_replicate(
    model: &ModelSpec,
    drift: &dyn DriftEvaluator,
    eps: f64,
    delta: f64,
    grid: TimeGrid,
    seed: &SeedSpec,
) -> Result<CoupledRun> {
    let noise = NoiseBundle::sample(model, eps, grid, seed)?;
    let original = simulate_slow_fast(model, eps, &noise)?;
    let averaged = simulate_homogenized(model, drift, grid, &noise.v, &noise.b, &noise.j1)?;
    let zhat = simulate_auxiliary(model, eps, delta, &original, &noise)?;
    let z = original.z.as_ref().expect("slow-fast paths carry z");
    let aux_sup_sq = sup_sq_distance(z, &zhat)?;
    Ok(CoupledRun {
        original,
        averaged,
        aux_sup_sq,
    })
}

struct SweepPoint {
    eps: f64,
    delta: f64,
    strong: Estimate,
    aux: Estimate,
    reps: usize,
    aborts: usize,
}

fn coupled_sweep(cfg: &ExperimentConfig) -> Result<(ModelSpec, Vec<SweepPoint>)> {
    let model = cfg.model()?;
    let diss = model.dissipativity()?;
    if !diss.valid && !model.is_documented_exception() {
        return config_err(format!("model fails dissipativity (M = {})", diss.m));
    }
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let mut points = Vec::new();
    for (i, &eps) in cfg.eps.iter().enumerate() {
        let delta = cfg.delta.width(eps, cfg.dt);
        let seed = SeedSpec::with_path(cfg.seed, &[prefix::STRONG, i as u64]);
        let (runs, aborts, _) = replicate(cfg.replications, &seed, |s| {
            coupled_replicate(&model, drift.as_ref(), eps, delta, grid, s)
        })?;
        enforce_quota(&format!("eps = {eps}"), aborts, cfg.replications, ABORT_QUOTA)?;
        let (orig, avg): (Vec<PathPair>, Vec<PathPair>) =
            runs.iter().map(|r| (r.original.clone(), r.averaged.clone())).unzip();
        let strong = strong_error(&orig, &avg)?;
        let aux = Estimate::from_samples(&runs.iter().map(|r| r.aux_sup_sq).collect::<Vec<_>>());
        points.push(SweepPoint {
            eps,
            delta,
            strong,
            aux,
            reps: runs.len(),
            aborts,
        });
    }
    Ok((model, points))
}

pub fn run_strong_convergence(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (model, points) = coupled_sweep(cfg)?;
    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    for p in &points {
        report.push(p.eps, p.delta, "strong_error", p.strong.mean, p.strong.se, p.reps, p.aborts);
        report.push(p.eps, p.delta, "bound_shape", bound_shape(p.eps, p.delta), 0.0, p.reps, p.aborts);
    }
    let values: Vec<f64> = points.iter().map(|p| p.strong.mean).collect();
    let ses: Vec<f64> = points.iter().map(|p| p.strong.se).collect();
    report.check(
        "strong_error_decreasing",
        non_increasing_within(&values, &ses, 3.0),
        format!("errors {values:?} along eps {:?}", cfg.eps),
    );
    if !model.slow_depends_on_fast() {
        report.check(
            "slope_fit",
            true,
            "skipped: slow drift ignores the fast state (degenerate configuration)",
        );
    } else {
        let pts: Vec<(f64, f64, f64)> = points.iter().map(|p| (p.eps, p.strong.mean, p.strong.se)).collect();
        match fit_loglog_slope(&pts) {
            Ok(fit) => {
                report.check(
                    "slope_in_window",
                    fit.slope >= SLOPE_WINDOW.0 && fit.slope <= SLOPE_WINDOW.1,
                    format!(
                        "slope {:.4} (95% CI [{:.4}, {:.4}]) against [{}, {}]",
                        fit.slope, fit.ci.0, fit.ci.1, SLOPE_WINDOW.0, SLOPE_WINDOW.1
                    ),
                );
                report.slope = Some(fit);
            }
            Err(e) => report.check("slope_in_window", false, e.to_string()),
        }
    }
    Ok(report)
}

pub fn run_aux_scaling(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let (model, points) = coupled_sweep(cfg)?;
    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    let mut ratios = Vec::new();
    for p in &points {
        let scale = p.delta * p.delta / p.eps;
        report.push(p.eps, p.delta, "aux_sup_sq", p.aux.mean, p.aux.se, p.reps, p.aborts);
        report.push(p.eps, p.delta, "aux_ratio", p.aux.mean / scale, p.aux.se / scale, p.reps, p.aborts);
        ratios.push(p.aux.mean / scale);
    }
    if model.fast_is_x_independent() {
        let zero = points.iter().all(|p| p.aux.mean == 0.0);
        report.check("aux_identical", zero, "fast coefficients ignore x: the processes coincide");
    } else {
        let max = ratios.iter().copied().fold(f64::MIN, f64::max);
        let min = ratios.iter().copied().fold(f64::MAX, f64::min);
        report.check(
            "aux_ratio_spread",
            min > 0.0 && max / min <= AUX_SPREAD_LIMIT,
            format!("ratios {ratios:?}, spread {:.3} (limit {AUX_SPREAD_LIMIT})", max / min),
        );
    }
    Ok(report)
}

pub fn run_filter_l1(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = cfg.model()?;
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let fcfg = cfg.filter_config(&model);
    let exp = FilterExperiment {
        model: &model,
        drift: drift.as_ref(),
        grid,
        filter: &fcfg,
        phi: 0,
    };
    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    let h_bound = cfg.sensor.h.bound();
    let mut values = Vec::new();
    let mut ses = Vec::new();
    let mut moments_ok = true;
    for (i, &eps) in cfg.eps.iter().enumerate() {
        let delta = cfg.delta.width(eps, cfg.dt);
        let seed = SeedSpec::with_path(cfg.seed, &[prefix::FILTER, i as u64]);
        let reps = exp.sensor_batch(&cfg.sensor, eps, cfg.replications, &seed)?;
        check_replicates(eps, &reps)?;
        let d = filter_l1_distance(&reps);
        report.push(eps, delta, "l1_distance", d.mean, d.se, reps.values.len(), reps.aborts + reps.degenerate);
        values.push(d.mean);
        ses.push(d.se);
        let logs: Vec<f64> = reps.values.iter().map(|v| v.log_rho1_hom).collect();
        for &p in &cfg.inverse_moment_p {
            let m = inverse_moment_check(&logs, p, h_bound, cfg.horizon);
            report.push(eps, m.bound, &format!("inverse_moment_p{p}"), m.estimate.mean, m.estimate.se, logs.len(), 0);
            moments_ok &= m.within_bound();
        }
    }
    report.check("inverse_moment_bound", moments_ok, "E rho0(1)^-p below exp{(2p^2+p+1)|h|^2 T/2}");
    if model.slow_depends_on_fast() {
        report.check(
            "l1_decreasing",
            non_increasing_within(&values, &ses, 3.0),
            format!("distances {values:?} along eps {:?}", cfg.eps),
        );
    } else {
        let worst = values.iter().copied().fold(0.0, f64::max);
        report.check(
            "l1_degenerate_floor",
            worst <= DEGENERATE_L1_CEILING,
            format!("largest distance {worst:.5} (ceiling {DEGENERATE_L1_CEILING})"),
        );
    }
    for &np in &cfg.plateau {
        let mut f = fcfg.clone();
        f.particles = np;
        let e = FilterExperiment { filter: &f, ..exp };
        let eps = cfg.eps[0];
        let seed = SeedSpec::with_path(cfg.seed, &[prefix::FILTER, 0]);
        let reps = e.sensor_batch(&cfg.sensor, eps, cfg.replications, &seed)?;
        check_replicates(eps, &reps)?;
        let d = filter_l1_distance(&reps);
        report.push(eps, np as f64, "l1_distance_by_particles", d.mean, d.se, reps.values.len(), reps.aborts + reps.degenerate);
    }
    Ok(report)
}

pub fn run_filter_weak(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = cfg.model()?;
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let fcfg = cfg.filter_config(&model);
    let exp = FilterExperiment {
        model: &model,
        drift: drift.as_ref(),
        grid,
        filter: &fcfg,
        phi: 0,
    };
    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    let (mut ks, mut ks_se, mut md, mut md_se) = (vec![], vec![], vec![], vec![]);
    for (i, &eps) in cfg.eps.iter().enumerate() {
        let delta = cfg.delta.width(eps, cfg.dt);
        let seed = SeedSpec::with_path(cfg.seed, &[prefix::WEAK, i as u64]);
        let reps = exp.levy_batch(&cfg.levy, eps, cfg.replications, &seed)?;
        check_replicates(eps, &reps)?;
        let w = weak_filter_distance(&reps, cfg.ks_resamples, &seed.child(u64::MAX));
        let n = reps.values.len();
        let fails = reps.aborts + reps.degenerate;
        report.push(eps, delta, "ks_statistic", w.ks, w.ks_se, n, fails);
        report.push(eps, delta, "abs_mean_difference", w.mean_difference.mean.abs(), w.mean_difference.se, n, fails);
        ks.push(w.ks);
        ks_se.push(w.ks_se);
        md.push(w.mean_difference.mean.abs());
        md_se.push(w.mean_difference.se);
    }
    report.check(
        "ks_decreasing",
        non_increasing_within(&ks, &ks_se, 2.0),
        format!("KS {ks:?} with bootstrap SE {ks_se:?}"),
    );
    report.check(
        "mean_difference_decreasing",
        non_increasing_within(&md, &md_se, 3.0),
        format!("|mean differences| {md:?}"),
    );
    Ok(report)
}

/// Particle and grid estimates of pi_t(phi) at the checkpoints of one
/// shared observation path.
pub struct Crosscheck {
    pub times: Vec<f64>,
    pub particle: Vec<Vec<f64>>,
    pub grid: Vec<Vec<f64>>,
    pub clipped: usize,
    pub node_steps: usize,
    pub boundary_fraction_max: f64,
}

/// Averaged Lévy signal started from a draw of `initial`, observed through
/// the Lévy channel; the noise lives under `seed`.
pub fn levy_observation_from_averaged(
    model: &ModelSpec,
    drift: &dyn DriftEvaluator,
    obs: &crate::filters::observation::LevyObservationModel,
    initial: InitialLaw,
    grid: TimeGrid,
    seed: &SeedSpec,
) -> Result<crate::filters::observation::ObservationPath> {
    let mut params = model.params.clone();
    params.x0 = match initial {
        InitialLaw::PointMass(x) => x,
        InitialLaw::Normal { mean, sd } => mean + sd * crate::rng::std_normal(&mut seed.child(99).rng()),
    };
    let m = ModelSpec::from_params(model.family, params)?;
    let noise = NoiseBundle::sample(&m, 1.0, grid, seed)?;
    let path = simulate_homogenized(&m, drift, grid, &noise.v, &noise.b, &noise.j1)?;
    let props = sample_thinning_proposals(grid, obs.nu3, &seed.child(stream::J_LAMBDA))?;
    simulate_observation_levy(&path.x, &noise.v, &props, obs)
}

pub fn zakai_crosscheck(
    model: &ModelSpec,
    drift: &dyn DriftEvaluator,
    obs: &crate::filters::observation::LevyObservationModel,
    y: &crate::filters::observation::ObservationPath,
    fcfg: &FilterConfig,
    fd: &crate::zakai::FdConfig,
    checkpoints: usize,
    seed: &SeedSpec,
) -> Result<Crosscheck> {
    let n = y.grid.steps();
    let every = (n / checkpoints.max(1)).max(1);
    let mut f = fcfg.clone();
    f.record_every = every;
    let trace = particle_filter_levy(y, model, FilterMode::Homogenized(drift), obs, &f, seed)?;
    let mut state = DensityGrid::new(fd.lo, fd.hi, fd.cells, fcfg.initial)?;
    let solver = ZakaiSolver::with_form(model, drift, obs, &state, y.grid.dt(), fd.scheme, fd.observation)?;
    let est = |s: &DensityGrid| -> Result<Vec<f64>> {
        f.phis.iter().map(|&p| fd_filter_estimate(s, p)).collect()
    };
    let mut grid_rows = vec![est(&state)?];
    let mut worst = state.boundary_fraction();
    for k in 0..n {
        solver.step(&mut state, y.dy[k])?;
        for e in y.events_in_cell(k).iter().filter(|e| e.on_u3) {
            solver.jump_update(&mut state, e.mark)?;
        }
        worst = worst.max(state.boundary_fraction());
        if (k + 1) % every == 0 || k + 1 == n {
            grid_rows.push(est(&state)?);
        }
    }
    Ok(Crosscheck {
        times: trace.times.clone(),
        particle: trace.pi_hat.clone(),
        grid: grid_rows,
        clipped: state.clipped,
        node_steps: n * state.q.len(),
        boundary_fraction_max: worst,
    })
}

/// Mean over replications of max_t |R_t| at step `dt` and `dt / 2`, both on
/// the same fine observation paths.
pub fn residual_halving(
    model: &ModelSpec,
    drift: &dyn DriftEvaluator,
    obs: &crate::filters::observation::LevyObservationModel,
    eps: f64,
    particles: usize,
    initial: InitialLaw,
    horizon: f64,
    dt: f64,
    reps: usize,
    seed: &SeedSpec,
) -> Result<(Estimate, Estimate)> {
    let fine = TimeGrid::with_dt(horizon, dt / 2.0)?;
    let mut fcfg = FilterConfig::new(particles, initial);
    fcfg.resample = false;
    fcfg.phis = vec![TestFunction::Tanh];
    let (pairs, aborts, degenerate) = replicate(reps, seed, |s| {
        let y_fine = levy_observation_from_averaged(model, drift, obs, initial, fine, &s.child(0))?;
        let y_coarse = y_fine.coarsen(2)?;
        let r = |y| {
            zakai_residual_check(
                y,
                model,
                FilterMode::Epsilon(eps),
                obs,
                &fcfg,
                TestFunction::Tanh,
                QvCorrection::Realized,
                &s.child(1),
            )
        };
        Ok((r(&y_coarse)?, r(&y_fine)?))
    })?;
    enforce_quota("residual", aborts + degenerate, reps, ABORT_QUOTA)?;
    let coarse: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let fine: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok((Estimate::from_samples(&coarse), Estimate::from_samples(&fine)))
}

pub fn run_zakai_crosscheck(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let model = cfg.model()?;
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let mut fcfg = cfg.filter_config(&model);
    if !fcfg.phis.contains(&TestFunction::Tanh) {
        fcfg.phis.insert(0, TestFunction::Tanh);
    }
    let tanh = fcfg.phis.iter().position(|p| *p == TestFunction::Tanh).expect("inserted above");
    let seed = SeedSpec::with_path(cfg.seed, &[prefix::ZAKAI]);
    let y = levy_observation_from_averaged(&model, drift.as_ref(), &cfg.levy, fcfg.initial, grid, &seed.child(0))?;
    let cc = zakai_crosscheck(&model, drift.as_ref(), &cfg.levy, &y, &fcfg, &cfg.fd, 10, &seed.child(1))?;

    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    for (c, t) in cc.times.iter().enumerate() {
        for (j, phi) in fcfg.phis.iter().enumerate() {
            let gap = (cc.particle[c][j] - cc.grid[c][j]).abs();
            report.push(0.0, *t, &format!("crosscheck_gap_{}", phi.id()), gap, 0.0, 1, 0);
        }
    }
    let last = cc.times.len() - 1;
    let gap = (cc.particle[last][tanh] - cc.grid[last][tanh]).abs();
    report.check(
        "crosscheck_gap",
        gap <= CROSSCHECK_BUDGET,
        format!(
            "particle {:.5} vs grid {:.5} at T (budget {CROSSCHECK_BUDGET})",
            cc.particle[last][tanh], cc.grid[last][tanh]
        ),
    );
    report.check(
        "grid_domain",
        cc.boundary_fraction_max < 1e-6,
        format!("max boundary mass fraction {:e}", cc.boundary_fraction_max),
    );
    report.check(
        "grid_positivity",
        (cc.clipped as f64) < 1e-4 * cc.node_steps as f64,
        format!("{} clipped of {} node-steps", cc.clipped, cc.node_steps),
    );

    let mut rp = model.params.clone();
    rp.sigma0 = cfg.residual.sigma0;
    let rmodel = ModelSpec::from_params(model.family, rp)?;
    let rdrift = build_drift(cfg, &rmodel)?;
    let (coarse, fine) = residual_halving(
        &rmodel,
        rdrift.as_ref(),
        &cfg.levy,
        cfg.residual.eps,
        cfg.residual.particles,
        fcfg.initial,
        cfg.horizon,
        cfg.residual.dt,
        cfg.residual.replications,
        &seed.child(2),
    )?;
    let reps = cfg.residual.replications;
    report.push(cfg.residual.eps, cfg.residual.dt, "zakai_residual", coarse.mean, coarse.se, reps, 0);
    report.push(cfg.residual.eps, cfg.residual.dt / 2.0, "zakai_residual", fine.mean, fine.se, reps, 0);
    let ratio = fine.mean / coarse.mean;
    report.check(
        "residual_halving",
        ratio >= HALVING_WINDOW.0 && ratio <= HALVING_WINDOW.1,
        format!(
            "residual {:.3e} at dt {} and {:.3e} at dt/2, ratio {ratio:.3} (window [{}, {}])",
            coarse.mean, cfg.residual.dt, fine.mean, HALVING_WINDOW.0, HALVING_WINDOW.1
        ),
    );
    report.check(
        "residual_budget",
        fine.mean < RESIDUAL_BUDGET,
        format!("fine residual {:.3e} (budget {RESIDUAL_BUDGET})", fine.mean),
    );
    Ok(report)
}

/// Drift-oracle, martingale and inverse-moment checks.
pub fn run_invariant_suite(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let mut report = ExperimentReport::new(cfg.kind, cfg.seed, cfg.echo());
    let base = SeedSpec::with_path(cfg.seed, &[prefix::INVARIANT]);

    let ou = ModelSpec::default_of(Family::AnalyticOu);
    let nodes = uniform_nodes(-3.0, 3.0, 21)?;
    let drift_ok = drift_oracle_check(&mut report, &ou, &nodes, 1e-2, cfg, &base.child(0))?;
    report.check("averaged_drift_analytic_ou", drift_ok, "21 nodes on [-3, 3], tolerance max(3 SE, 1e-2)");
    let bt = ModelSpec::default_of(Family::BoundedTanh);
    let pts = [-2.0, -0.7, 0.0, 0.9, 2.5];
    let drift_ok = drift_oracle_check(&mut report, &bt, &pts, 1e-3, cfg, &base.child(1))?;
    report.check("averaged_drift_bounded_tanh", drift_ok, "5 points, tolerance max(3 SE, 1e-3)");

    let eps = cfg.eps[0];
    let grid = cfg.grid()?;
    let reps = cfg.replications;
    let sensor = &cfg.sensor;
    let (inv, aborts, _) = replicate(reps, &base.child(2), |s| {
        let noise = NoiseBundle::sample(&ou, eps, grid, s)?;
        let path = simulate_slow_fast(&ou, eps, &noise)?;
        let y = simulate_observation_sensor(&path.x, &noise.v, &noise.b, sensor)?;
        let lg = girsanov_weight_sensor(&path.x, &y, sensor.h)?;
        Ok((-lg[lg.len() - 1]).exp())
    })?;
    let e = Estimate::from_samples(&inv);
    report.push(eps, 0.0, "inverse_gamma_mean", e.mean, e.se, inv.len(), aborts);
    report.check("gamma_martingale", e.agrees_with(1.0, 3.0), format!("{:.5} +- {:.5}", e.mean, e.se));

    let levy_model = ModelSpec::default_of(Family::LevyCorrelated);
    let levy = &cfg.levy;
    let (inv, aborts, _) = replicate(reps, &base.child(3), |s| {
        let noise = NoiseBundle::sample(&levy_model, eps, grid, s)?;
        let path = simulate_slow_fast(&levy_model, eps, &noise)?;
        let props = sample_thinning_proposals(grid, levy.nu3, &s.child(stream::J_LAMBDA))?;
        let y = simulate_observation_levy(&path.x, &noise.v, &props, levy)?;
        let ll = likelihood_levy(&path.x, &y, levy)?;
        Ok((-ll[ll.len() - 1]).exp())
    })?;
    let e = Estimate::from_samples(&inv);
    report.push(eps, 0.0, "inverse_lambda_mean", e.mean, e.se, inv.len(), aborts);
    report.check("lambda_martingale", e.agrees_with(1.0, 3.0), format!("{:.5} +- {:.5}", e.mean, e.se));

    let drift = ClosedFormDrift::new(ou.clone());
    let mut fcfg = FilterConfig::new(cfg.invariant_particles, InitialLaw::PointMass(ou.params.x0));
    fcfg.phis = vec![TestFunction::Tanh];
    let exp = FilterExperiment {
        model: &ou,
        drift: &drift,
        grid: TimeGrid::with_dt(cfg.horizon, 2e-3_f64.min(eps / 10.0))?,
        filter: &fcfg,
        phi: 0,
    };
    let reps = exp.sensor_batch(sensor, eps, cfg.invariant_replications, &base.child(4))?;
    check_replicates(eps, &reps)?;
    let logs: Vec<f64> = reps.values.iter().map(|v| v.log_rho1_hom).collect();
    for &p in &cfg.inverse_moment_p {
        let m = inverse_moment_check(&logs, p, sensor.h.bound(), cfg.horizon);
        report.push(eps, m.bound, &format!("inverse_moment_p{p}"), m.estimate.mean, m.estimate.se, logs.len(), 0);
        report.check(
            &format!("inverse_moment_p{p}"),
            m.within_bound(),
            format!("{:.4} against bound {:.4}", m.estimate.mean, m.bound),
        );
    }
    Ok(report)
}

fn drift_oracle_check(
    report: &mut ExperimentReport,
    model: &ModelSpec,
    points: &[f64],
    floor: f64,
    cfg: &ExperimentConfig,
    seed: &SeedSpec,
) -> Result<bool> {
    let est: Vec<Estimate> = points
        .par_iter()
        .enumerate()
        .map(|(i, &x)| averaged_drift(model, x, cfg.estimator(), &seed.child(i as u64)))
        .collect::<Result<_>>()?;
    let mut ok = true;
    for (&x, e) in points.iter().zip(&est) {
        let reference = model.bbar_reference(x)?;
        let tol = (3.0 * e.se).max(floor);
        ok &= (e.mean - reference).abs() <= tol;
        report.push(0.0, x, &format!("bbar_error_{}", model.family), e.mean - reference, e.se, e.n, 0);
    }
    Ok(ok)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bound_shape_prefers_the_power_rule() {
        for eps in [0.1, 0.05, 0.02, 0.01] {
            let p = bound_shape(eps, eps.powf(2.0 / 3.0));
            let f = bound_shape(eps, 0.3);
            assert!(p < f, "eps {eps}: {p} vs {f}");
        }
    }

    #[test]
    fn small_strong_sweep_is_reproducible() {
        let text = "experiment.kind = \"strong-convergence\"\nsweep.replications = 4\nsweep.eps = [0.1, 0.05, 0.02]\nsweep.dt = 0.002\n";
        let cfg = ExperimentConfig::from_str_for(text, None).unwrap();
        let a = run(&cfg).unwrap();
        let b = run(&cfg).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows_for("strong_error").len(), 3);
    }
}
