use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use slowfast::averaging::{build_drift_cache, fmt17, uniform_nodes};
use slowfast::error::{Error, Result};
use slowfast::filters::observation::{simulate_observation_levy, simulate_observation_sensor};
use slowfast::filters::particle::{particle_filter_levy, particle_filter_sensor, FilterMode};
use slowfast::harness::experiments::build_drift;
use slowfast::harness::{run, ExperimentConfig, ExperimentKind};
use slowfast::kernel::sample_thinning_proposals;
use slowfast::rng::SeedSpec;
use slowfast::sde::{simulate_homogenized, simulate_slow_fast, stream, NoiseBundle};

#[derive(Parser, Debug)]
#[command(name = "slowfast", version, about = "Slow-fast jump-diffusion averaging and filtering experiments")]
struct Cli {
    /// Configuration file (TOML, flat `section.key = value` paths).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides `experiment.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `experiment.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads, 0 = one per core.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one coupled slow-fast / averaged path at the first eps.
    Simulate,
    /// Build the averaged-drift cache on the configured node grid.
    Average,
    /// Filter one simulated observation path with both filters.
    Filter {
        #[arg(long, value_enum, default_value_t = Channel::Sensor)]
        channel: Channel,
        /// Checkpoints written per trace.
        #[arg(long, default_value_t = 100)]
        checkpoints: usize,
    },
    /// Run an experiment: strong-convergence, aux-scaling, filter-l1,
    /// filter-weak, zakai-crosscheck or invariant-suite.
    Run { kind: String },
    /// Run the invariant suite.
    Selftest,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Channel {
    Sensor,
    Levy,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) | Error::Stability { .. } | Error::Model(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn load(cli: &Cli, kind: Option<ExperimentKind>) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p, kind)?,
        None => ExperimentConfig::from_str_for("", kind)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn execute(cli: &Cli) -> Result<bool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    match &cli.command {
        Command::Run { kind } => experiment(cli, ExperimentKind::parse(kind)?),
        Command::Selftest => experiment(cli, ExperimentKind::InvariantSuite),
        Command::Simulate => {
            let cfg = load(cli, None)?;
            simulate(&cfg, &out_dir(&cfg))?;
            Ok(true)
        }
        Command::Average => {
            let cfg = load(cli, None)?;
            average(&cfg, &out_dir(&cfg))?;
            Ok(true)
        }
        Command::Filter { channel, checkpoints } => {
            let cfg = load(cli, None)?;
            filter(&cfg, *channel, *checkpoints, &out_dir(&cfg))?;
            Ok(true)
        }
    }
}

fn experiment(cli: &Cli, kind: ExperimentKind) -> Result<bool> {
    let cfg = load(cli, Some(kind))?;
    log::info!("running {kind} with seed {}", cfg.seed);
    let report = run(&cfg)?;
    let files = report.write_dir(&out_dir(&cfg))?;
    for c in &report.checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    for f in files {
        log::info!("wrote {}", f.display());
    }
    Ok(report.passed())
}

fn simulate(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let model = cfg.model()?;
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let eps = cfg.eps[0];
    let noise = NoiseBundle::sample(&model, eps, grid, &SeedSpec::with_path(cfg.seed, &[0]))?;
    let orig = simulate_slow_fast(&model, eps, &noise)?;
    let hom = simulate_homogenized(&model, drift.as_ref(), grid, &noise.v, &noise.b, &noise.j1)?;
    std::fs::create_dir_all(dir)?;
    let path = dir.join("simulate.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["t", "x_eps", "z_eps", "x_hom"])?;
    let z = orig.z.as_ref().expect("slow-fast paths carry z");
    for k in 0..=grid.steps() {
        w.write_record([
            fmt17(grid.time(k)),
            fmt17(orig.x[k]),
            fmt17(z[k]),
            fmt17(hom.x[k]),
        ])?;
    }
    w.flush()?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn average(cfg: &ExperimentConfig, dir: &Path) -> Result<()> {
    let model = cfg.model()?;
    let nodes = uniform_nodes(cfg.drift.lo, cfg.drift.hi, cfg.drift.nodes)?;
    let mut cache = build_drift_cache(&model, nodes, cfg.estimator(), &SeedSpec::with_path(cfg.seed, &[7]), None)?;
    cache.interpolation = cfg.drift.interpolation;
    for w in &cache.warnings {
        log::warn!("{w}");
    }
    std::fs::create_dir_all(dir)?;
    let path = dir.join("drift_cache.csv");
    cache.write_csv(&path)?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn filter(cfg: &ExperimentConfig, channel: Channel, checkpoints: usize, dir: &Path) -> Result<()> {
    let model = cfg.model()?;
    let drift = build_drift(cfg, &model)?;
    let grid = cfg.grid()?;
    let eps = cfg.eps[0];
    let seed = SeedSpec::with_path(cfg.seed, &[0]);
    let noise = NoiseBundle::sample(&model, eps, grid, &seed)?;
    let path = simulate_slow_fast(&model, eps, &noise)?;
    let mut fcfg = cfg.filter_config(&model);
    fcfg.record_every = (grid.steps() / checkpoints.max(1)).max(1);
    let (te, th) = match channel {
        Channel::Sensor => {
            let y = simulate_observation_sensor(&path.x, &noise.v, &noise.b, &cfg.sensor)?;
            (
                particle_filter_sensor(&y, &model, FilterMode::Epsilon(eps), &cfg.sensor, &fcfg, &seed.child(1))?,
                particle_filter_sensor(&y, &model, FilterMode::Homogenized(drift.as_ref()), &cfg.sensor, &fcfg, &seed.child(2))?,
            )
        }
        Channel::Levy => {
            let props = sample_thinning_proposals(grid, cfg.levy.nu3, &seed.child(stream::J_LAMBDA))?;
            let y = simulate_observation_levy(&path.x, &noise.v, &props, &cfg.levy)?;
            (
                particle_filter_levy(&y, &model, FilterMode::Epsilon(eps), &cfg.levy, &fcfg, &seed.child(1))?,
                particle_filter_levy(&y, &model, FilterMode::Homogenized(drift.as_ref()), &cfg.levy, &fcfg, &seed.child(2))?,
            )
        }
    };
    std::fs::create_dir_all(dir)?;
    for (name, t) in [("filter_eps.csv", &te), ("filter_hom.csv", &th)] {
        let p = dir.join(name);
        t.write_csv(&p)?;
        log::info!("wrote {}", p.display());
    }
    Ok(())
}
