//! Replicated filter comparisons: L1 distance between the original and
//! averaged filters, inverse moments of rho(1), and weak-convergence
//! statistics.

use rayon::prelude::*;

use super::observation::{
    simulate_observation_levy, simulate_observation_sensor, LevyObservationModel,
    SensorObservationModel,
};
use super::particle::{particle_filter_levy, particle_filter_sensor, FilterConfig, FilterMode};
use crate::averaging::DriftEvaluator;
use crate::error::{Error, Result};
use crate::kernel::{sample_thinning_proposals, TimeGrid};
use crate::model::ModelSpec;
use crate::rng::SeedSpec;
use crate::sde::{simulate_slow_fast, stream, NoiseBundle};
use crate::stats::{ks_bootstrap_se, ks_statistic, Estimate};

/// Filter estimates from one replication sharing one observation path.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedEstimate {
    pub pi_eps: f64,
    pub pi_hom: f64,
    pub log_rho1_hom: f64,
}

/// Results of a batch of replications; aborted ones are counted, not kept.
#[derive(Clone, Debug, PartialEq)]
pub struct Replicates {
    pub values: Vec<PairedEstimate>,
    pub aborts: usize,
    pub degenerate: usize,
}

impl Replicates {
    pub fn requested(&self) -> usize {
        self.values.len() + self.aborts + self.degenerate
    }
}

/// Shared setup for the filter comparisons.
pub struct FilterExperiment<'a> {
    pub model: &'a ModelSpec,
    pub drift: &'a dyn DriftEvaluator,
    pub grid: TimeGrid,
    pub filter: &'a FilterConfig,
    /// Index into `filter.phis`.
    pub phi: usize,
}

fn collect(results: Vec<Result<PairedEstimate>>) -> Result<Replicates> {
    let mut out = Replicates {
        values: Vec::with_capacity(results.len()),
        aborts: 0,
        degenerate: 0,
    };
    for r in results {
        match r {
            Ok(v) => out.values.push(v),
            Err(Error::Divergence { step }) => {
                log::warn!("replication diverged at step {step}");
                out.aborts += 1;
            }
            Err(Error::Degeneracy { step }) => {
                log::warn!("filter weights collapsed at step {step}");
                out.degenerate += 1;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

impl FilterExperiment<'_> {
    pub fn sensor_replicate(
        &self,
        obs: &SensorObservationModel,
        eps: f64,
        seed: &SeedSpec,
    ) -> Result<PairedEstimate> {
        let noise = NoiseBundle::sample(self.model, eps, self.grid, &seed.child(0))?;
        let path = simulate_slow_fast(self.model, eps, &noise)?;
        let y = simulate_observation_sensor(&path.x, &noise.v, &noise.b, obs)?;
        let fe = particle_filter_sensor(&y, self.model, FilterMode::Epsilon(eps), obs, self.filter, &seed.child(1))?;
        let f0 = particle_filter_sensor(
            &y,
            self.model,
            FilterMode::Homogenized(self.drift),
            obs,
            self.filter,
            &seed.child(2),
        )?;
        Ok(PairedEstimate {
            pi_eps: fe.last(self.phi),
            pi_hom: f0.last(self.phi),
            log_rho1_hom: f0.last_log_rho1(),
        })
    }

    pub fn levy_replicate(
        &self,
        obs: &LevyObservationModel,
        eps: f64,
        seed: &SeedSpec,
    ) -> Result<PairedEstimate> {
        let s = seed.child(0);
        let noise = NoiseBundle::sample(self.model, eps, self.grid, &s)?;
        let path = simulate_slow_fast(self.model, eps, &noise)?;
        let props = sample_thinning_proposals(self.grid, obs.nu3, &s.child(stream::J_LAMBDA))?;
        let y = simulate_observation_levy(&path.x, &noise.v, &props, obs)?;
        let fe = particle_filter_levy(&y, self.model, FilterMode::Epsilon(eps), obs, self.filter, &seed.child(1))?;
        let f0 = particle_filter_levy(
            &y,
            self.model,
            FilterMode::Homogenized(self.drift),
            obs,
            self.filter,
            &seed.child(2),
        )?;
        Ok(PairedEstimate {
            pi_eps: fe.last(self.phi),
            pi_hom: f0.last(self.phi),
            log_rho1_hom: f0.last_log_rho1(),
        })
    }

    /// Replication r runs on `seed.child(r)`, so results do not depend on
    /// scheduling.
    pub fn sensor_batch(
        &self,
        obs: &SensorObservationModel,
        eps: f64,
        reps: usize,
        seed: &SeedSpec,
    ) -> Result<Replicates> {
        collect(
            (0..reps)
                .into_par_iter()
                .map(|r| self.sensor_replicate(obs, eps, &seed.child(r as u64)))
                .collect(),
        )
    }

    pub fn levy_batch(
        &self,
        obs: &LevyObservationModel,
        eps: f64,
        reps: usize,
        seed: &SeedSpec,
    ) -> Result<Replicates> {
        collect(
            (0..reps)
                .into_par_iter()
                .map(|r| self.levy_replicate(obs, eps, &seed.child(r as u64)))
                .collect(),
        )
    }
}

/// E |pi_eps(phi) - pi_0(phi)| with its standard error.
pub fn filter_l1_distance(reps: &Replicates) -> Estimate {
    let d: Vec<f64> = reps.values.iter().map(|v| (v.pi_eps - v.pi_hom).abs()).collect();
    Estimate::from_samples(&d)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InverseMoment {
    pub estimate: Estimate,
    pub bound: f64,
}

impl InverseMoment {
    pub fn within_bound(&self) -> bool {
        self.estimate.mean <= self.bound
    }
}

/// Empirical E rho(1)^(-p) against exp{(2p^2 + p + 1) C T / 2}, C = |h|_inf^2.
pub fn inverse_moment_check(log_rho1: &[f64], p: f64, h_bound: f64, horizon: f64) -> InverseMoment {
    let samples: Vec<f64> = log_rho1.iter().map(|l| (-p * l).exp()).collect();
    InverseMoment {
        estimate: Estimate::from_samples(&samples),
        bound: ((2.0 * p * p + p + 1.0) * h_bound * h_bound * horizon / 2.0).exp(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeakDistance {
    /// Paired differences pi_eps - pi_0.
    pub mean_difference: Estimate,
    pub ks: f64,
    pub ks_se: f64,
}

pub fn weak_filter_distance(reps: &Replicates, resamples: usize, seed: &SeedSpec) -> WeakDistance {
    let a: Vec<f64> = reps.values.iter().map(|v| v.pi_eps).collect();
    let b: Vec<f64> = reps.values.iter().map(|v| v.pi_hom).collect();
    let d: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
    WeakDistance {
        mean_difference: Estimate::from_samples(&d),
        ks: ks_statistic(&a, &b),
        ks_se: ks_bootstrap_se(&a, &b, resamples, seed),
    }
}
