//! Weighted particle approximations of the unnormalized filter under the
//! reference measure, for both observation models.
//!
//! Each particle slot owns a random stream and its own jump clocks. Resampling
//! moves states and weights between slots but never the streams, so
//! duplicated particles diverge immediately.

use super::observation::{LevyObservationModel, MarkedEvent, ObservationPath, SensorObservationModel};
use super::{FilterTrace, TestFunction};
use crate::averaging::DriftEvaluator;
use crate::error::{config_err, Error, Result};
use crate::kernel::{JumpEvent, JumpMeasure, TimeGrid};
use crate::model::ModelSpec;
use crate::rng::{open_unit, std_exp, std_normal, SeedSpec, StreamRng};
use crate::sde::{check_stability, fast_step, slow_step};

/// Signal law the filter targets.
#[derive(Clone, Copy)]
pub enum FilterMode<'a> {
    /// Slow-fast system at scale eps; each particle carries a fast state.
    Epsilon(f64),
    /// Averaged system with the supplied drift.
    Homogenized(&'a dyn DriftEvaluator),
}

impl std::fmt::Debug for FilterMode<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::Epsilon(e) => write!(f, "Epsilon({e})"),
            Self::Homogenized(_) => f.write_str("Homogenized"),
        }
    }
}

/// Law of X_0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum InitialLaw {
    PointMass(f64),
    Normal { mean: f64, sd: f64 },
}

impl InitialLaw {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Self::PointMass(x) => x,
            Self::Normal { mean, sd } => mean + sd * std_normal(rng),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::PointMass(x) => x,
            Self::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            Self::PointMass(_) => 0.0,
            Self::Normal { sd, .. } => sd * sd,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub particles: usize,
    pub resample: bool,
    /// Record a checkpoint every this many steps (and always at the end).
    pub record_every: usize,
    pub phis: Vec<TestFunction>,
    pub initial: InitialLaw,
}

impl FilterConfig {
    pub fn new(particles: usize, initial: InitialLaw) -> Self {
        Self {
            particles,
            resample: true,
            record_every: usize::MAX,
            phis: vec![TestFunction::Tanh],
            initial,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return config_err("particle count must be >= 1");
        }
        if self.record_every == 0 {
            return config_err("record_every must be >= 1");
        }
        if let InitialLaw::Normal { sd, .. } = self.initial {
            if !(sd >= 0.0) {
                return config_err("initial standard deviation must be >= 0");
            }
        }
        Ok(())
    }
}

/// Particle states and unnormalized log-weights at one time.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub step: usize,
    pub time: f64,
    pub x: Vec<f64>,
    /// Fast states; empty in homogenized mode.
    pub z: Vec<f64>,
    pub logw: Vec<f64>,
}

impl ParticleEnsemble {
    /// Log of the largest weight and the weights rescaled by it.
    fn scaled_weights(&self) -> Result<(f64, Vec<f64>)> {
        let m = self.logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !m.is_finite() {
            return Err(Error::Degeneracy { step: self.step });
        }
        Ok((m, self.logw.iter().map(|l| (l - m).exp()).collect()))
    }

    /// log rho(1) = log of the mean weight.
    pub fn log_rho1(&self) -> Result<f64> {
        let (m, w) = self.scaled_weights()?;
        Ok(m + (w.iter().sum::<f64>() / w.len() as f64).ln())
    }

    /// 1 / sum of squared normalized weights.
    pub fn ess(&self) -> Result<f64> {
        let (_, w) = self.scaled_weights()?;
        let s: f64 = w.iter().sum();
        let s2: f64 = w.iter().map(|v| v * v).sum();
        Ok(s * s / s2)
    }

    /// Normalized-weight estimate of pi(phi).
    pub fn pi(&self, phi: TestFunction) -> Result<f64> {
        let (_, w) = self.scaled_weights()?;
        let s: f64 = w.iter().sum();
        Ok(w.iter().zip(&self.x).map(|(w, &x)| w * phi.value(x)).sum::<f64>() / s)
    }
}

/// Per-step callback receiving the ensemble before the step, the weights
/// after the continuous update, the propagated states and the step's
/// observed events.
pub trait StepObserver {
    fn observe(
        &mut self,
        k: usize,
        before: &ParticleEnsemble,
        logw_mid: &[f64],
        x_next: &[f64],
        events: &[MarkedEvent],
    ) -> Result<()>;
}

#[derive(Clone, Copy)]
enum Channel<'a> {
    Sensor { h: &'a SensorObservationModel, s3: f64, s: f64 },
    Levy(&'a LevyObservationModel),
}

struct Slot {
    rng: StreamRng,
    next_j1: f64,
    next_j2: f64,
}

fn first_arrival(rng: &mut StreamRng, rate: f64) -> f64 {
    if rate > 0.0 {
        std_exp(rng) / rate
    } else {
        f64::INFINITY
    }
}

fn drain_clock(
    clock: &mut f64,
    until: f64,
    rate: f64,
    measure: JumpMeasure,
    rng: &mut StreamRng,
    out: &mut Vec<JumpEvent>,
) {
    out.clear();
    while *clock <= until {
        out.push(JumpEvent {
            time: *clock,
            mark: measure.law.sample(rng),
        });
        *clock += std_exp(rng) / rate;
    }
}

pub fn particle_filter_sensor(
    y: &ObservationPath,
    model: &ModelSpec,
    mode: FilterMode<'_>,
    obs: &SensorObservationModel,
    cfg: &FilterConfig,
    seed: &SeedSpec,
) -> Result<FilterTrace> {
    let (s3, _, s) = obs.scalar_parts()?;
    run_filter(y, model, mode, Channel::Sensor { h: obs, s3, s }, cfg, seed, None)
}

pub fn particle_filter_levy(
    y: &ObservationPath,
    model: &ModelSpec,
    mode: FilterMode<'_>,
    obs: &LevyObservationModel,
    cfg: &FilterConfig,
    seed: &SeedSpec,
) -> Result<FilterTrace> {
    run_filter(y, model, mode, Channel::Levy(obs), cfg, seed, None)
}

/// Lévy filter with a per-step observer (resampling must be off).
pub fn particle_filter_levy_observed(
    y: &ObservationPath,
    model: &ModelSpec,
    mode: FilterMode<'_>,
    obs: &LevyObservationModel,
    cfg: &FilterConfig,
    seed: &SeedSpec,
    observer: &mut dyn StepObserver,
) -> Result<FilterTrace> {
    if cfg.resample {
        return config_err("per-step observation requires resampling to be disabled");
    }
    run_filter(y, model, mode, Channel::Levy(obs), cfg, seed, Some(observer))
}

fn record(trace: &mut FilterTrace, ens: &ParticleEnsemble, phis: &[TestFunction]) -> Result<()> {
    trace.times.push(ens.time);
    trace.pi_hat.push(phis.iter().map(|&p| ens.pi(p)).collect::<Result<_>>()?);
    trace.log_rho1.push(ens.log_rho1()?);
    trace.ess.push(ens.ess()?);
    Ok(())
}

/// Systematic resampling; every survivor gets the mean weight so rho(1) is
/// unchanged.
fn resample(ens: &mut ParticleEnsemble, rng: &mut StreamRng) -> Result<()> {
    let np = ens.x.len();
    let (_, w) = ens.scaled_weights()?;
    let log_mean = ens.log_rho1()?;
    let total: f64 = w.iter().sum();
    let step = total / np as f64;
    let mut target = open_unit(rng) * step;
    let mut cum = 0.0;
    let mut j = 0usize;
    let mut idx = Vec::with_capacity(np);
    for (i, wi) in w.iter().enumerate() {
        cum += wi;
        while j < np && target < cum {
            idx.push(i);
            target += step;
            j += 1;
        }
    }
    while idx.len() < np {
        idx.push(np - 1);
    }
    ens.x = idx.iter().map(|&i| ens.x[i]).collect();
    if !ens.z.is_empty() {
        ens.z = idx.iter().map(|&i| ens.z[i]).collect();
    }
    ens.logw.iter_mut().for_each(|l| *l = log_mean);
    Ok(())
}

fn run_filter(
    y: &ObservationPath,
    model: &ModelSpec,
    mode: FilterMode<'_>,
    channel: Channel<'_>,
    cfg: &FilterConfig,
    seed: &SeedSpec,
    mut observer: Option<&mut dyn StepObserver>,
) -> Result<FilterTrace> {
    cfg.validate()?;
    let grid: TimeGrid = y.grid;
    let dt = grid.dt();
    let sqdt = dt.sqrt();
    let np = cfg.particles;
    let eps = match mode {
        FilterMode::Epsilon(eps) => {
            check_stability(dt, eps)?;
            Some(eps)
        }
        FilterMode::Homogenized(_) => None,
    };
    let nu1 = model.nu1();
    let nu2 = model.nu2();
    let r1 = if model.has_slow_jumps() { nu1.rate } else { 0.0 };
    let r2 = match eps {
        Some(e) if model.has_fast_jumps() => nu2.rate / e,
        _ => 0.0,
    };
    let uses_b = model.sigma_b(0.0) != 0.0;

    let slots_seed = seed.child(0);
    let mut slots: Vec<Slot> = (0..np)
        .map(|i| {
            let mut rng = slots_seed.child(i as u64).rng();
            let next_j1 = first_arrival(&mut rng, r1);
            let next_j2 = first_arrival(&mut rng, r2);
            Slot { rng, next_j1, next_j2 }
        })
        .collect();
    let mut resample_rng = seed.child(1).rng();

    let mut ens = ParticleEnsemble {
        step: 0,
        time: 0.0,
        x: slots.iter_mut().map(|s| cfg.initial.sample(&mut s.rng)).collect(),
        z: if eps.is_some() {
            vec![model.params.z0; np]
        } else {
            Vec::new()
        },
        logw: vec![0.0; np],
    };

    let mut trace = FilterTrace {
        phis: cfg.phis.clone(),
        ..Default::default()
    };
    record(&mut trace, &ens, &cfg.phis)?;

    let mut j1 = Vec::new();
    let mut j2 = Vec::new();
    let mut x_next = vec![0.0; np];
    let mut z_next = vec![0.0; ens.z.len()];
    let mut logw_mid = vec![0.0; np];
    let n = grid.steps();
    for k in 0..n {
        let t_next = grid.time(k + 1);
        let dy = y.dy[k];
        for i in 0..np {
            let slot = &mut slots[i];
            let x = ens.x[i];
            let (dlogw, dv) = match channel {
                Channel::Sensor { h, s3, s } => {
                    let hx = h.h.eval(x);
                    let fresh = if s != 0.0 { s * sqdt * std_normal(&mut slot.rng) } else { 0.0 };
                    (hx * dy - 0.5 * hx * hx * dt, s3 * dy + fresh - s3 * hx * dt)
                }
                Channel::Levy(o) => {
                    let hx = o.h.eval(x);
                    (
                        hx * dy - 0.5 * hx * hx * dt + dt * o.compensator(x),
                        dy - hx * dt,
                    )
                }
            };
            logw_mid[i] = ens.logw[i] + dlogw;
            let db = if uses_b { sqdt * std_normal(&mut slot.rng) } else { 0.0 };
            drain_clock(&mut slot.next_j1, t_next, r1, nu1, &mut slot.rng, &mut j1);
            let drift = match mode {
                FilterMode::Epsilon(_) => model.b1(x, ens.z[i]),
                FilterMode::Homogenized(d) => d.bbar(x),
            };
            let xn = slow_step(model, drift, x, dt, dv, db, &j1);
            if let Some(e) = eps {
                let dw = sqdt * std_normal(&mut slot.rng);
                drain_clock(&mut slot.next_j2, t_next, r2, nu2, &mut slot.rng, &mut j2);
                z_next[i] = fast_step(model, e, x, ens.z[i], dt, dw, &j2);
            }
            if !xn.is_finite() {
                return Err(Error::Divergence { step: k });
            }
            x_next[i] = xn;
        }
        let events = y.events_in_cell(k);
        if let Some(obsr) = observer.as_deref_mut() {
            obsr.observe(k, &ens, &logw_mid, &x_next, events)?;
        }
        let mut logw = std::mem::take(&mut logw_mid);
        if let Channel::Levy(o) = channel {
            for e in events.iter().filter(|e| e.on_u3) {
                for (i, l) in logw.iter_mut().enumerate() {
                    *l += o.lambda_checked(ens.x[i], e.mark)?.ln();
                }
            }
        }
        logw_mid = std::mem::replace(&mut ens.logw, logw);
        std::mem::swap(&mut ens.x, &mut x_next);
        if eps.is_some() {
            std::mem::swap(&mut ens.z, &mut z_next);
        }
        ens.step = k + 1;
        ens.time = t_next;
        if !ens.logw.iter().any(|l| l.is_finite()) {
            return Err(Error::Degeneracy { step: k + 1 });
        }
        if (k + 1) % cfg.record_every == 0 || k + 1 == n {
            record(&mut trace, &ens, &cfg.phis)?;
        }
        if cfg.resample && k + 1 < n && ens.ess()? < 0.5 * np as f64 {
            resample(&mut ens, &mut resample_rng)?;
            trace.resamples += 1;
        }
    }
    Ok(trace)
}

/// dV = sigma3 dY + S dV~ - sigma3 h dt: the conditional law of the signal's
/// V-increment given the observation increment, under the reference measure.
#[inline]
pub fn conditional_v_increment(s3: f64, s: f64, dy: f64, hx: f64, dt: f64, xi: f64) -> f64 {
    s3 * dy + s * dt.sqrt() * xi - s3 * hx * dt
}
