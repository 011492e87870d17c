//! Acceptance gate: one PASS/FAIL line per criterion, at full scale.
//! Run with `cargo test --release --test acceptance` (the test profile is
//! already optimized).

mod common;

use std::time::Instant;

use slowfast::harness::{run, ExperimentConfig, ExperimentKind, ExperimentReport};

struct Outcome {
    id: usize,
    name: &'static str,
    passed: bool,
    detail: String,
    secs: f64,
}

fn config(kind: ExperimentKind, text: &str) -> ExperimentConfig {
    ExperimentConfig::from_str_for(text, Some(kind)).expect("acceptance configs are valid")
}

fn check<'a>(r: &'a ExperimentReport, name: &str) -> &'a slowfast::harness::Check {
    r.checks
        .iter()
        .find(|c| c.name == name)
        .unwrap_or_else(|| panic!("{} report lacks check `{name}`", r.kind))
}

fn strictly_decreasing(r: &ExperimentReport, metric: &str) -> (bool, Vec<f64>) {
    let v: Vec<f64> = r.rows_for(metric).iter().map(|row| row.value).collect();
    (v.windows(2).all(|w| w[1] < w[0]), v)
}

fn csv_bytes(r: &ExperimentReport) -> Vec<u8> {
    let mut out = Vec::new();
    r.write_rows_to(&mut out).unwrap();
    r.write_checks_to(&mut out).unwrap();
    out.extend_from_slice(r.config_echo.as_bytes());
    out
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .unwrap()
        .install(f)
}

fn timed(id: usize, name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t = Instant::now();
    let (passed, detail) = f();
    let o = Outcome {
        id,
        name,
        passed,
        detail,
        secs: t.elapsed().as_secs_f64(),
    };
    println!(
        "criterion {:>2} {:<28} {} ({:.1} s) {}",
        o.id,
        o.name,
        if o.passed { "PASS" } else { "FAIL" },
        o.secs,
        o.detail
    );
    o
}

fn main() {
    let mut out = Vec::new();

    let strong = run(&config(ExperimentKind::StrongConvergence, "")).unwrap();
    out.push(timed(1, "strong-convergence rate", || {
        let (dec, v) = strictly_decreasing(&strong, "strong_error");
        let s = strong.slope.expect("slope fitted");
        let ok = dec && check(&strong, "strong_error_decreasing").passed && check(&strong, "slope_in_window").passed;
        (
            ok,
            format!(
                "E sup|X-X0|^2 = {v:.5?}; slope {:.3} in [0.25, 1.5], 95% CI [{:.3}, {:.3}]; {:.1} s run",
                s.slope, s.ci.0, s.ci.1, strong.wall_clock_secs
            ),
        )
    }));

    out.push(timed(2, "auxiliary-process scaling", || {
        let r = run(&config(ExperimentKind::AuxScaling, "")).unwrap();
        let c = check(&r, "aux_ratio_spread");
        (c.passed, c.detail.clone())
    }));

    let inv = run(&config(ExperimentKind::InvariantSuite, "")).unwrap();
    out.push(timed(3, "averaged-drift oracles", || {
        let a = check(&inv, "averaged_drift_analytic_ou");
        let b = check(&inv, "averaged_drift_bounded_tanh");
        let worst = |fam: &str| {
            inv.rows
                .iter()
                .filter(|r| r.metric == format!("bbar_error_{fam}"))
                .map(|r| r.value.abs())
                .fold(0.0, f64::max)
        };
        (
            a.passed && b.passed,
            format!(
                "max |error| analytic-ou {:.2e} (21 nodes), bounded-tanh {:.2e} (5 points)",
                worst("analytic-ou"),
                worst("bounded-tanh")
            ),
        )
    }));
    out.push(timed(4, "martingale normalizations", || {
        let g = check(&inv, "gamma_martingale");
        let l = check(&inv, "lambda_martingale");
        let n = inv.rows_for("inverse_gamma_mean")[0].replications;
        (
            g.passed && l.passed && n >= 10_000,
            format!("1/gamma_T {}; 1/lambda_T {}; {n} replications", g.detail, l.detail),
        )
    }));
    out.push(timed(5, "inverse-moment bound", || {
        let c = check(&inv, "inverse_moment_p2");
        let row = inv.rows_for("inverse_moment_p2")[0];
        let ok = c.passed && (row.param - (11.0f64 * 0.25 / 2.0).exp()).abs() < 1e-9;
        (ok, format!("E rho0_T(1)^-2 = {:.4} +- {:.4}, bound {:.4}", row.value, row.se, row.param))
    }));

    out.push(timed(6, "filter L1 convergence", || {
        let r = run(&config(ExperimentKind::FilterL1, "")).unwrap();
        let (dec, v) = strictly_decreasing(&r, "l1_distance");
        let d = run(&config(ExperimentKind::FilterL1, "model.q = 0.0\nfilter.particles = 10000\n")).unwrap();
        let floor = check(&d, "l1_degenerate_floor");
        let dv: Vec<f64> = d.rows_for("l1_distance").iter().map(|row| row.value).collect();
        (
            dec && check(&r, "l1_decreasing").passed && floor.passed,
            format!("distances {v:.4?} (Np 5000, 100 reps); z-independent at Np 10^4: {dv:.4?} <= 0.02"),
        )
    }));

    out.push(timed(7, "Kalman-Bucy sub-case", || {
        let runs: Vec<(f64, f64)> = (1..=3).map(|s| common::kalman_case(s, 10_000)).collect();
        let worst = runs.iter().map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        (worst <= 0.05, format!("max |particle - Kalman| over 3 paths = {worst:.4} (budget 0.05)"))
    }));

    out.push(timed(8, "Zakai cross-check", || {
        let r = run(&config(ExperimentKind::ZakaiCrosscheck, "")).unwrap();
        let gap = check(&r, "crosscheck_gap");
        let halving = check(&r, "residual_halving");
        (
            r.passed(),
            format!("{}; {}; positivity {}", gap.detail, halving.detail, check(&r, "grid_positivity").detail),
        )
    }));

    out.push(timed(9, "weak filter convergence", || {
        let r = run(&config(ExperimentKind::FilterWeak, "")).unwrap();
        let c = check(&r, "ks_decreasing");
        (c.passed, c.detail.clone())
    }));

    out.push(timed(10, "reproducibility", || {
        let small: [(ExperimentKind, &str); 6] = [
            (ExperimentKind::StrongConvergence, "sweep.replications = 16\nsweep.eps = [0.1, 0.05, 0.02]\n"),
            (ExperimentKind::AuxScaling, "sweep.replications = 16\nsweep.eps = [0.1, 0.05, 0.02]\n"),
            (ExperimentKind::FilterL1, "sweep.replications = 6\nfilter.particles = 200\nfilter.plateau = [100]\n"),
            (ExperimentKind::FilterWeak, "sweep.replications = 8\nfilter.particles = 200\nweak.resamples = 20\n"),
            (
                ExperimentKind::ZakaiCrosscheck,
                "filter.particles = 500\nzakai.cells = 200\nresidual.particles = 200\nresidual.replications = 3\n",
            ),
            (
                ExperimentKind::InvariantSuite,
                "sweep.replications = 300\ndrift.horizon = 2000.0\ninvariant.filter_particles = 100\ninvariant.filter_replications = 8\n",
            ),
        ];
        let mut bad = Vec::new();
        for (kind, text) in small {
            let cfg = config(kind, text);
            let a = in_pool(1, || csv_bytes(&run(&cfg).unwrap()));
            let b = in_pool(1, || csv_bytes(&run(&cfg).unwrap()));
            let c = in_pool(4, || csv_bytes(&run(&cfg).unwrap()));
            if a != b || a != c {
                bad.push(kind.name());
            }
        }
        let full = in_pool(4, || run(&config(ExperimentKind::StrongConvergence, "")).unwrap());
        if csv_bytes(&full) != csv_bytes(&strong) {
            bad.push("strong-convergence (full scale)");
        }
        (
            bad.is_empty(),
            if bad.is_empty() {
                "all six kinds: repeated serial runs and 1- vs 4-thread pools give identical CSV bytes".into()
            } else {
                format!("mismatch in {bad:?}")
            },
        )
    }));

    let failed: Vec<usize> = out.iter().filter(|o| !o.passed).map(|o| o.id).collect();
    let total: f64 = out.iter().map(|o| o.secs).sum();
    println!(
        "acceptance: {}/{} criteria pass ({total:.0} s)",
        out.len() - failed.len(),
        out.len()
    );
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
