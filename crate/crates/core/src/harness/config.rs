//! Experiment configuration: a TOML file read as flat `section.key` paths.
//! Every key is consumed exactly once; anything left over is an error.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use toml::Value;

use crate::averaging::{EstimatorConfig, Interpolation};
use crate::error::{config_err, Error, Result};
use crate::filters::observation::{LambdaFn, LevyObservationModel, ObsFn, SensorObservationModel};
use crate::filters::particle::{FilterConfig, InitialLaw};
use crate::filters::TestFunction;
use crate::kernel::{JumpMeasure, MarkLaw, MarkRegion, TimeGrid};
use crate::model::{ModelSpec, ParamValue};
use crate::zakai::{FdConfig, FdScheme, ObservationForm};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ExperimentKind {
    StrongConvergence,
    AuxScaling,
    FilterL1,
    FilterWeak,
    ZakaiCrosscheck,
    InvariantSuite,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 6] = [
        Self::StrongConvergence,
        Self::AuxScaling,
        Self::FilterL1,
        Self::FilterWeak,
        Self::ZakaiCrosscheck,
        Self::InvariantSuite,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown experiment kind `{s}` (one of: {})",
                    Self::ALL.map(|k| k.name()).join(", ")
                ))
            })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::StrongConvergence => "strong-convergence",
            Self::AuxScaling => "aux-scaling",
            Self::FilterL1 => "filter-l1",
            Self::FilterWeak => "filter-weak",
            Self::ZakaiCrosscheck => "zakai-crosscheck",
            Self::InvariantSuite => "invariant-suite",
        }
    }

    fn default_model(&self) -> &'static str {
        match self {
            Self::FilterWeak | Self::ZakaiCrosscheck => "levy-correlated",
            _ => "analytic-ou",
        }
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Partition width rule: eps^p or a fixed width, snapped to the time grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DeltaRule {
    Power(f64),
    Fixed(f64),
}

impl DeltaRule {
    pub fn parse(s: &str) -> Result<Self> {
        let (kind, arg) = s.split_once(':').unwrap_or((s, ""));
        let num = |a: &str| -> Result<f64> {
            let v = match a.split_once('/') {
                Some((n, d)) => n.trim().parse::<f64>().ok().zip(d.trim().parse::<f64>().ok()).map(|(n, d)| n / d),
                None => a.trim().parse().ok(),
            };
            v.filter(|v| v.is_finite() && *v > 0.0)
                .ok_or_else(|| Error::Config(format!("bad number `{a}` in delta rule `{s}`")))
        };
        match kind.trim() {
            "power" if arg.is_empty() => Ok(Self::Power(2.0 / 3.0)),
            "power" => Ok(Self::Power(num(arg)?)),
            "fixed" => Ok(Self::Fixed(num(arg)?)),
            _ => config_err(format!("unknown delta rule `{s}` (power:p or fixed:d)")),
        }
    }

    /// Width for `eps`, rounded to a whole number of steps (at least one).
    pub fn width(&self, eps: f64, dt: f64) -> f64 {
        let raw = match *self {
            Self::Power(p) => eps.powf(p),
            Self::Fixed(d) => d,
        };
        (raw / dt).round().max(1.0) * dt
    }
}

impl fmt::Display for DeltaRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Power(p) if *p == 2.0 / 3.0 => f.write_str("power:2/3"),
            Self::Power(p) => write!(f, "power:{p}"),
            Self::Fixed(d) => write!(f, "fixed:{d}"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DriftSource {
    /// The family's analytic or quadrature drift.
    Reference,
    /// A cache estimated from the frozen fast process.
    Cache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DriftSettings {
    pub source: DriftSource,
    pub lo: f64,
    pub hi: f64,
    pub nodes: usize,
    pub estimator: EstimatorConfig,
    pub interpolation: Interpolation,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSettings {
    pub eps: f64,
    pub sigma0: f64,
    pub particles: usize,
    pub replications: usize,
    /// Coarse step; the halving compares dt against dt / 2.
    pub dt: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub model_name: String,
    pub overrides: BTreeMap<String, ParamValue>,
    pub eps: Vec<f64>,
    pub delta: DeltaRule,
    pub dt: f64,
    pub horizon: f64,
    pub replications: usize,
    pub drift: DriftSettings,
    pub particles: usize,
    pub phis: Vec<TestFunction>,
    pub resample: bool,
    /// None starts the filter at the model's x0.
    pub initial_sd: Option<f64>,
    pub plateau: Vec<usize>,
    pub sensor: SensorObservationModel,
    pub levy: LevyObservationModel,
    pub fd: FdConfig,
    pub residual: ResidualSettings,
    pub ks_resamples: usize,
    pub inverse_moment_p: Vec<f64>,
    pub invariant_particles: usize,
    pub invariant_replications: usize,
}

/// Flattened key -> value table with consumption tracking.
struct Keys(BTreeMap<String, Value>);

fn flatten(prefix: &str, table: &toml::Table, out: &mut BTreeMap<String, Value>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            Value::Table(t) => flatten(&key, t, out),
            other => {
                out.insert(key, other.clone());
            }
        }
    }
}

impl Keys {
    fn take(&mut self, key: &str) -> Option<Value> {
        self.0.remove(key)
    }

    fn f64(&mut self, key: &str, default: f64) -> Result<f64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Float(v)) => Ok(v),
            Some(Value::Integer(v)) => Ok(v as f64),
            Some(v) => config_err(format!("`{key}` must be a number, got {v}")),
        }
    }

    fn usize(&mut self, key: &str, default: usize) -> Result<usize> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(v)) if v >= 0 => Ok(v as usize),
            Some(v) => config_err(format!("`{key}` must be a nonnegative integer, got {v}")),
        }
    }

    fn u64(&mut self, key: &str, default: u64) -> Result<u64> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Integer(v)) if v >= 0 => Ok(v as u64),
            Some(Value::String(s)) => s
                .parse()
                .map_err(|_| Error::Config(format!("`{key}` must be an unsigned integer"))),
            Some(v) => config_err(format!("`{key}` must be an unsigned integer, got {v}")),
        }
    }

    fn bool(&mut self, key: &str, default: bool) -> Result<bool> {
        match self.take(key) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(b),
            Some(v) => config_err(format!("`{key}` must be a boolean, got {v}")),
        }
    }

    fn string(&mut self, key: &str, default: &str) -> Result<String> {
        match self.take(key) {
            None => Ok(default.to_string()),
            Some(Value::String(s)) => Ok(s),
            Some(v) => config_err(format!("`{key}` must be a string, got {v}")),
        }
    }

    fn f64_list(&mut self, key: &str, default: &[f64]) -> Result<Vec<f64>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .into_iter()
                .map(|v| match v {
                    Value::Float(f) => Ok(f),
                    Value::Integer(i) => Ok(i as f64),
                    v => config_err(format!("`{key}` entries must be numbers, got {v}")),
                })
                .collect(),
            Some(v) => config_err(format!("`{key}` must be an array, got {v}")),
        }
    }

    fn usize_list(&mut self, key: &str, default: &[usize]) -> Result<Vec<usize>> {
        match self.take(key) {
            None => Ok(default.to_vec()),
            Some(Value::Array(a)) => a
                .into_iter()
                .map(|v| match v {
                    Value::Integer(i) if i > 0 => Ok(i as usize),
                    v => config_err(format!("`{key}` entries must be positive integers, got {v}")),
                })
                .collect(),
            Some(v) => config_err(format!("`{key}` must be an array, got {v}")),
        }
    }

    fn string_list(&mut self, key: &str, default: &[&str]) -> Result<Vec<String>> {
        match self.take(key) {
            None => Ok(default.iter().map(|s| s.to_string()).collect()),
            Some(Value::Array(a)) => a
                .into_iter()
                .map(|v| match v {
                    Value::String(s) => Ok(s),
                    v => config_err(format!("`{key}` entries must be strings, got {v}")),
                })
                .collect(),
            Some(v) => config_err(format!("`{key}` must be an array, got {v}")),
        }
    }

    /// Removes and returns every key under `prefix.`.
    fn section(&mut self, prefix: &str) -> BTreeMap<String, Value> {
        let p = format!("{prefix}.");
        let keys: Vec<String> = self.0.keys().filter(|k| k.starts_with(&p)).cloned().collect();
        keys.into_iter()
            .map(|k| {
                let v = self.0.remove(&k).expect("key listed above");
                (k[p.len()..].to_string(), v)
            })
            .collect()
    }
}

impl ExperimentConfig {
    /// Defaults for `kind` with no file.
    pub fn defaults(kind: ExperimentKind) -> Result<Self> {
        Self::from_str_for("", Some(kind))
    }

    pub fn from_path(path: &Path, kind: Option<ExperimentKind>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str_for(&text, kind)
    }

    /// Parses `text`; `kind` (from the command line) must agree with any
    /// `experiment.kind` in the file.
    pub fn from_str_for(text: &str, kind: Option<ExperimentKind>) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(format!("TOML: {e}")))?;
        let mut flat = BTreeMap::new();
        flatten("", &table, &mut flat);
        let mut k = Keys(flat);

        let file_kind = match k.take("experiment.kind") {
            None => None,
            Some(Value::String(s)) => Some(ExperimentKind::parse(&s)?),
            Some(v) => return config_err(format!("`experiment.kind` must be a string, got {v}")),
        };
        let kind = match (kind, file_kind) {
            (Some(a), Some(b)) if a != b => {
                return config_err(format!("command line asks for {a} but the file declares {b}"))
            }
            (Some(a), _) | (None, Some(a)) => a,
            (None, None) => ExperimentKind::InvariantSuite,
        };
        let levy_kind = matches!(kind, ExperimentKind::FilterWeak | ExperimentKind::ZakaiCrosscheck);

        let seed = k.u64("experiment.seed", 20_260_915)?;
        let out_dir = match k.take("experiment.out") {
            None => None,
            Some(Value::String(s)) => Some(PathBuf::from(s)),
            Some(v) => return config_err(format!("`experiment.out` must be a string, got {v}")),
        };

        let model_name = k.string("model.name", kind.default_model())?;
        let mut overrides = BTreeMap::new();
        for (name, v) in k.section("model") {
            let pv = match v {
                Value::Float(f) => ParamValue::Num(f),
                Value::Integer(i) => ParamValue::Num(i as f64),
                Value::String(s) => ParamValue::Text(s),
                v => return config_err(format!("`model.{name}` must be a number or string, got {v}")),
            };
            overrides.insert(name, pv);
        }
        if kind == ExperimentKind::ZakaiCrosscheck && !overrides.contains_key("c1") {
            // The grid solver has no signal-jump term.
            overrides.insert("c1".into(), ParamValue::Num(0.0));
        }

        let (eps_default, dt_default, reps_default): (&[f64], f64, usize) = match kind {
            ExperimentKind::StrongConvergence | ExperimentKind::AuxScaling => {
                (&[0.1, 0.05, 0.02, 0.01], 1e-3, 200)
            }
            ExperimentKind::FilterL1 => (&[0.1, 0.05, 0.02], 2e-3, 100),
            ExperimentKind::FilterWeak => (&[0.1, 0.05, 0.02], 2e-3, 200),
            ExperimentKind::ZakaiCrosscheck => (&[0.05], 1e-3, 1),
            ExperimentKind::InvariantSuite => (&[0.1], 1e-3, 10_000),
        };
        let eps = k.f64_list("sweep.eps", eps_default)?;
        let delta = DeltaRule::parse(&k.string("sweep.delta", "power:2/3")?)?;
        let dt = k.f64("sweep.dt", dt_default)?;
        let horizon = k.f64("sweep.horizon", 1.0)?;
        let replications = k.usize("sweep.replications", reps_default)?;

        let source = match k.string("drift.source", "reference")?.as_str() {
            "reference" => DriftSource::Reference,
            "cache" => DriftSource::Cache,
            s => return config_err(format!("unknown drift source `{s}` (reference or cache)")),
        };
        let est_default = EstimatorConfig::default();
        let drift = DriftSettings {
            source,
            lo: k.f64("drift.lo", -3.0)?,
            hi: k.f64("drift.hi", 6.0)?,
            nodes: k.usize("drift.nodes", 91)?,
            estimator: EstimatorConfig {
                dt: k.f64("drift.dt", est_default.dt)?,
                horizon: k.f64("drift.horizon", est_default.horizon)?,
                burn_in: match k.take("drift.burn_in") {
                    None => None,
                    Some(Value::Float(f)) => Some(f),
                    Some(Value::Integer(i)) => Some(i as f64),
                    Some(v) => return config_err(format!("`drift.burn_in` must be a number, got {v}")),
                },
                thinning: match k.take("drift.thinning") {
                    None => None,
                    Some(Value::Integer(i)) if i > 0 => Some(i as usize),
                    Some(v) => return config_err(format!("`drift.thinning` must be a positive integer, got {v}")),
                },
                min_samples: k.usize("drift.min_samples", est_default.min_samples)?,
            },
            interpolation: match k.string("drift.interpolation", "multilinear")?.as_str() {
                "multilinear" => Interpolation::Multilinear,
                "nearest" => Interpolation::Nearest,
                s => return config_err(format!("unknown interpolation `{s}`")),
            },
        };

        let particles_default = match kind {
            ExperimentKind::FilterWeak => 1000,
            ExperimentKind::ZakaiCrosscheck => 10_000,
            _ => 5000,
        };
        let particles = k.usize("filter.particles", particles_default)?;
        let phis = k
            .string_list("filter.phis", &["tanh"])?
            .iter()
            .map(|s| TestFunction::parse(s))
            .collect::<Result<Vec<_>>>()?;
        let resample = k.bool("filter.resample", true)?;
        let initial_default = if kind == ExperimentKind::ZakaiCrosscheck { 0.25 } else { 0.0 };
        let sd = k.f64("filter.initial_sd", initial_default)?;
        let initial_sd = if sd > 0.0 { Some(sd) } else { None };
        let plateau = k.usize_list("filter.plateau", &[])?;

        let h_default = if levy_kind { "tanh:1" } else { "tanh:0.5" };
        let h = ObsFn::parse(&k.string("observation.h", h_default)?)?;
        let sigma3 = k.f64("observation.sigma3", 0.6)?;
        let sensor = SensorObservationModel::scalar(h, sigma3)?;
        let cat = LevyObservationModel::catalog();
        let levy = LevyObservationModel::new(
            h,
            LambdaFn {
                base: k.f64("observation.lambda_base", cat.lambda.base)?,
                amp: k.f64("observation.lambda_amp", cat.lambda.amp)?,
            },
            JumpMeasure::new(
                k.f64("observation.rate", cat.nu3.rate)?,
                MarkLaw::parse(&k.string("observation.law", &cat.nu3.law.name())?)?,
            )?,
            MarkRegion::symmetric(k.f64("observation.u3", cat.u3.hi)?),
            k.f64("observation.a3", cat.a3)?,
            k.f64("observation.g3", cat.g3)?,
            k.f64("observation.margin", cat.margin)?,
        )?;

        let fd_default = FdConfig::default();
        let fd = FdConfig {
            lo: k.f64("zakai.lo", fd_default.lo)?,
            hi: k.f64("zakai.hi", fd_default.hi)?,
            cells: k.usize("zakai.cells", fd_default.cells)?,
            scheme: match k.string("zakai.scheme", "implicit")?.as_str() {
                "implicit" => FdScheme::Implicit,
                "explicit" => FdScheme::Explicit,
                s => return config_err(format!("unknown scheme `{s}` (implicit or explicit)")),
            },
            observation: ObservationForm::parse(&k.string("zakai.observation", fd_default.observation.name())?)?,
        };
        let residual = ResidualSettings {
            eps: k.f64("residual.eps", 0.05)?,
            sigma0: k.f64("residual.sigma0", 0.0)?,
            particles: k.usize("residual.particles", 10_000)?,
            replications: k.usize("residual.replications", 10)?,
            dt: k.f64("residual.dt", 2e-3)?,
        };
        let ks_resamples = k.usize("weak.resamples", 200)?;
        let inverse_moment_p = k.f64_list("invariant.p", &[2.0, 3.0])?;
        let invariant_particles = k.usize("invariant.filter_particles", 500)?;
        let invariant_replications = k.usize("invariant.filter_replications", 200)?;

        if !k.0.is_empty() {
            return config_err(format!(
                "unknown configuration keys: {}",
                k.0.keys().cloned().collect::<Vec<_>>().join(", ")
            ));
        }

        let cfg = Self {
            kind,
            seed,
            out_dir,
            model_name,
            overrides,
            eps,
            delta,
            dt,
            horizon,
            replications,
            drift,
            particles,
            phis,
            resample,
            initial_sd,
            plateau,
            sensor,
            levy,
            fd,
            residual,
            ks_resamples,
            inverse_moment_p,
            invariant_particles,
            invariant_replications,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if self.eps.is_empty() {
            return config_err("sweep.eps must not be empty");
        }
        for w in self.eps.windows(2) {
            if !(w[1] < w[0]) {
                return config_err("sweep.eps must be strictly decreasing");
            }
        }
        for &e in &self.eps {
            if !(e > 0.0 && e <= 1.0) {
                return config_err(format!("eps values must lie in (0, 1], got {e}"));
            }
        }
        let grid = self.grid()?;
        let min_eps = self.eps[self.eps.len() - 1];
        if self.dt > min_eps / 10.0 * (1.0 + 1e-9) {
            return config_err(format!("sweep.dt = {} exceeds min(eps)/10 = {}", self.dt, min_eps / 10.0));
        }
        for &e in &self.eps {
            grid.steps_for(self.delta.width(e, self.dt))?;
        }
        if self.replications == 0 {
            return config_err("sweep.replications must be >= 1");
        }
        if self.phis.is_empty() {
            return config_err("filter.phis must not be empty");
        }
        self.model()?;
        Ok(())
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::with_dt(self.horizon, self.dt)
    }

    pub fn model(&self) -> Result<ModelSpec> {
        ModelSpec::catalog(&self.model_name, &self.overrides)
    }

    pub fn initial_law(&self, model: &ModelSpec) -> InitialLaw {
        match self.initial_sd {
            Some(sd) => InitialLaw::Normal {
                mean: model.params.x0,
                sd,
            },
            None => InitialLaw::PointMass(model.params.x0),
        }
    }

    pub fn filter_config(&self, model: &ModelSpec) -> FilterConfig {
        FilterConfig {
            particles: self.particles,
            resample: self.resample,
            record_every: usize::MAX,
            phis: self.phis.clone(),
            initial: self.initial_law(model),
        }
    }

    /// TOML text that parses back to this configuration.
    pub fn echo(&self) -> String {
        let mut lines = vec![
            format!("experiment.kind = \"{}\"", self.kind),
            format!("experiment.seed = {}", self.seed),
            format!("model.name = \"{}\"", self.model_name),
        ];
        for (k, v) in &self.overrides {
            lines.push(match v {
                ParamValue::Num(x) => format!("model.{k} = {}", float(*x)),
                ParamValue::Text(s) => format!("model.{k} = \"{s}\""),
            });
        }
        let list = |v: &[f64]| v.iter().map(|x| float(*x)).collect::<Vec<_>>().join(", ");
        lines.extend([
            format!("sweep.eps = [{}]", list(&self.eps)),
            format!("sweep.delta = \"{}\"", self.delta),
            format!("sweep.dt = {}", float(self.dt)),
            format!("sweep.horizon = {}", float(self.horizon)),
            format!("sweep.replications = {}", self.replications),
            format!(
                "drift.source = \"{}\"",
                match self.drift.source {
                    DriftSource::Reference => "reference",
                    DriftSource::Cache => "cache",
                }
            ),
            format!("drift.lo = {}", float(self.drift.lo)),
            format!("drift.hi = {}", float(self.drift.hi)),
            format!("drift.nodes = {}", self.drift.nodes),
            format!("drift.dt = {}", float(self.drift.estimator.dt)),
            format!("drift.horizon = {}", float(self.drift.estimator.horizon)),
            format!("drift.min_samples = {}", self.drift.estimator.min_samples),
            format!(
                "drift.interpolation = \"{}\"",
                match self.drift.interpolation {
                    Interpolation::Multilinear => "multilinear",
                    Interpolation::Nearest => "nearest",
                }
            ),
        ]);
        if let Some(b) = self.drift.estimator.burn_in {
            lines.push(format!("drift.burn_in = {}", float(b)));
        }
        if let Some(t) = self.drift.estimator.thinning {
            lines.push(format!("drift.thinning = {t}"));
        }
        let phis = self.phis.iter().map(|p| format!("\"{}\"", p.id())).collect::<Vec<_>>();
        let plateau = self.plateau.iter().map(|p| p.to_string()).collect::<Vec<_>>();
        let l = &self.levy;
        lines.extend([
            format!("filter.particles = {}", self.particles),
            format!("filter.phis = [{}]", phis.join(", ")),
            format!("filter.resample = {}", self.resample),
            format!("filter.initial_sd = {}", float(self.initial_sd.unwrap_or(0.0))),
            format!("filter.plateau = [{}]", plateau.join(", ")),
            format!("observation.h = \"{}\"", self.sensor.h.id()),
            format!("observation.sigma3 = {}", float(self.sensor.sigma3[(0, 0)])),
            format!("observation.lambda_base = {}", float(l.lambda.base)),
            format!("observation.lambda_amp = {}", float(l.lambda.amp)),
            format!("observation.rate = {}", float(l.nu3.rate)),
            format!("observation.law = \"{}\"", l.nu3.law.name()),
            format!("observation.u3 = {}", float(l.u3.hi)),
            format!("observation.a3 = {}", float(l.a3)),
            format!("observation.g3 = {}", float(l.g3)),
            format!("observation.margin = {}", float(l.margin)),
            format!("zakai.lo = {}", float(self.fd.lo)),
            format!("zakai.hi = {}", float(self.fd.hi)),
            format!("zakai.cells = {}", self.fd.cells),
            format!(
                "zakai.scheme = \"{}\"",
                match self.fd.scheme {
                    FdScheme::Implicit => "implicit",
                    FdScheme::Explicit => "explicit",
                }
            ),
            format!("zakai.observation = \"{}\"", self.fd.observation.name()),
            format!("residual.eps = {}", float(self.residual.eps)),
            format!("residual.sigma0 = {}", float(self.residual.sigma0)),
            format!("residual.particles = {}", self.residual.particles),
            format!("residual.replications = {}", self.residual.replications),
            format!("residual.dt = {}", float(self.residual.dt)),
            format!("weak.resamples = {}", self.ks_resamples),
            format!("invariant.p = [{}]", list(&self.inverse_moment_p)),
            format!("invariant.filter_particles = {}", self.invariant_particles),
            format!("invariant.filter_replications = {}", self.invariant_replications),
        ]);
        if let Some(o) = &self.out_dir {
            lines.push(format!("experiment.out = \"{}\"", o.display()));
        }
        lines.join("\n") + "\n"
    }

    /// Estimator settings for a cache build.
    pub fn estimator(&self) -> &EstimatorConfig {
        &self.drift.estimator
    }
}

/// Shortest float text that reads back exactly and stays a TOML float.
fn float(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains('.') || s.contains('e') || s.contains("inf") || s.contains("NaN") {
        s
    } else {
        format!("{s}.0")
    }
}
