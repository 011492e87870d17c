use std::path::Path;
use std::process::{Command, Output};

fn slowfast(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slowfast"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const SMALL_STRONG: &str = "experiment.kind = \"strong-convergence\"\nsweep.eps = [0.1, 0.05, 0.02]\nsweep.replications = 24\n";

#[test]
fn run_writes_reproducible_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL_STRONG);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let o = slowfast(&["--config", &cfg, "--out", dir.to_str().unwrap(), "--threads", threads, "run", "strong-convergence"]);
        assert!(o.status.code() == Some(0) || o.status.code() == Some(1), "{o:?}");
    }
    for f in ["strong-convergence.csv", "strong-convergence_checks.csv"] {
        assert_eq!(read(&a, f), read(&b, f), "{f} differs");
    }
    let without_out = |s: String| s.lines().filter(|l| !l.starts_with("experiment.out")).collect::<Vec<_>>().join("\n");
    assert_eq!(
        without_out(read(&a, "strong-convergence_config.toml")),
        without_out(read(&b, "strong-convergence_config.toml"))
    );
    let rows = read(&a, "strong-convergence.csv");
    assert!(rows.starts_with("eps,param,metric,value,se,replications,aborts\n"));
    assert_eq!(rows.lines().filter(|l| l.contains(",strong_error,")).count(), 3);
    assert!(a.join("strong-convergence_timing.txt").exists());
}

#[test]
fn config_echo_reruns_to_the_same_bytes() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "s.toml", SMALL_STRONG);
    let a = tmp.path().join("a");
    slowfast(&["--config", &cfg, "--seed", "99", "--out", a.to_str().unwrap(), "run", "strong-convergence"]);
    let echo = a.join("strong-convergence_config.toml");
    assert!(read(&a, "strong-convergence_config.toml").contains("experiment.seed = 99"));
    let b = tmp.path().join("b");
    slowfast(&["--config", echo.to_str().unwrap(), "--out", b.to_str().unwrap(), "run", "strong-convergence"]);
    assert_eq!(read(&a, "strong-convergence.csv"), read(&b, "strong-convergence.csv"));
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let typo = write(tmp.path(), "t.toml", "sweep.replicatons = 3\n");
    assert_eq!(slowfast(&["--config", &typo, "run", "aux-scaling"]).status.code(), Some(2));
    let unstable = write(tmp.path(), "u.toml", "sweep.eps = [0.01]\nsweep.dt = 0.005\n");
    assert_eq!(slowfast(&["--config", &unstable, "run", "aux-scaling"]).status.code(), Some(2));
    assert_eq!(slowfast(&["run", "no-such-experiment"]).status.code(), Some(2));
    let clash = write(tmp.path(), "c.toml", "experiment.kind = \"filter-l1\"\n");
    assert_eq!(slowfast(&["--config", &clash, "run", "aux-scaling"]).status.code(), Some(2));
}

#[test]
fn failed_checks_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    // The Euler observation form clips far more than the positivity budget allows.
    let cfg = write(
        tmp.path(),
        "z.toml",
        "zakai.observation = \"euler\"\nfilter.particles = 300\nresidual.particles = 100\nresidual.replications = 2\n",
    );
    let o = slowfast(&["--config", &cfg, "--out", tmp.path().to_str().unwrap(), "run", "zakai-crosscheck"]);
    assert_eq!(o.status.code(), Some(1), "{o:?}");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("FAIL grid_positivity"), "{stdout}");
}

#[test]
fn simulate_average_and_filter_verbs_write_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().to_str().unwrap();
    let cfg = write(
        tmp.path(),
        "v.toml",
        "model.name = \"levy-correlated\"\nsweep.eps = [0.05]\ndrift.nodes = 5\ndrift.horizon = 200.0\nfilter.particles = 100\n",
    );
    assert_eq!(slowfast(&["--config", &cfg, "--out", out, "simulate"]).status.code(), Some(0));
    let sim = read(tmp.path(), "simulate.csv");
    assert!(sim.starts_with("t,x_eps,z_eps,x_hom\n"));
    assert_eq!(sim.lines().count(), 1002);

    assert_eq!(slowfast(&["--config", &cfg, "--out", out, "average"]).status.code(), Some(0));
    assert!(tmp.path().join("drift_cache.csv").exists());

    for channel in ["sensor", "levy"] {
        let o = slowfast(&["--config", &cfg, "--out", out, "filter", "--channel", channel, "--checkpoints", "10"]);
        assert_eq!(o.status.code(), Some(0), "{o:?}");
        let t = read(tmp.path(), "filter_eps.csv");
        assert!(t.starts_with("t,phi_id,pi_hat,rho1_hat,ess\n"));
        assert_eq!(t.lines().count(), 12);
        assert!(tmp.path().join("filter_hom.csv").exists());
    }
}
