//! Discrete Zakai-equation residual of an unresampled Lévy particle filter.

use super::generator::{generator_apply, generator_with_drift};
use super::observation::{LevyObservationModel, MarkedEvent, ObservationPath};
use super::particle::{
    particle_filter_levy_observed, FilterConfig, FilterMode, ParticleEnsemble, StepObserver,
};
use super::TestFunction;
use crate::error::{config_err, Result};
use crate::model::ModelSpec;
use crate::rng::SeedSpec;

/// Treatment of the quadratic variation of the observation in the residual.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QvCorrection {
    /// Subtract the second-order terms at the realized squared increments
    /// minus dt, leaving an O(dt) residual.
    Realized,
    /// Plain Euler sums; the residual then carries an O(sqrt(dt)) martingale.
    Nominal,
}

pub struct ZakaiResidual<'a> {
    model: &'a ModelSpec,
    obs: &'a LevyObservationModel,
    psi: TestFunction,
    mode: FilterMode<'a>,
    dt: f64,
    dy: &'a [f64],
    correction: QvCorrection,
    rho0: f64,
    integral: f64,
    pub times: Vec<f64>,
    pub residuals: Vec<f64>,
}

impl<'a> ZakaiResidual<'a> {
    pub fn new(
        model: &'a ModelSpec,
        obs: &'a LevyObservationModel,
        psi: TestFunction,
        mode: FilterMode<'a>,
        y: &'a ObservationPath,
        correction: QvCorrection,
    ) -> Result<Self> {
        psi.jet(0.0)?;
        Ok(Self {
            model,
            obs,
            psi,
            mode,
            dt: y.grid.dt(),
            dy: &y.dy,
            correction,
            rho0: 0.0,
            integral: 0.0,
            times: Vec::new(),
            residuals: Vec::new(),
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.residuals.iter().fold(0.0, |m, r| m.max(r.abs()))
    }
}

impl StepObserver for ZakaiResidual<'_> {
    fn observe(
        &mut self,
        k: usize,
        before: &ParticleEnsemble,
        logw_mid: &[f64],
        x_next: &[f64],
        events: &[MarkedEvent],
    ) -> Result<()> {
        let np = before.x.len() as f64;
        let dt = self.dt;
        let dv = self.dy[k];
        let qv = match self.correction {
            QvCorrection::Realized => dv * dv - dt,
            QvCorrection::Nominal => 0.0,
        };
        if k == 0 {
            self.rho0 = before
                .x
                .iter()
                .zip(&before.logw)
                .map(|(&x, l)| l.exp() * self.psi.value(x))
                .sum::<f64>()
                / np;
        }
        let mut term = 0.0;
        for (i, (&x, l)) in before.x.iter().zip(&before.logw).enumerate() {
            let (p, d1, d2) = self.psi.jet(x)?;
            let gen = match self.mode {
                FilterMode::Epsilon(_) => generator_apply(self.model, self.psi, x, before.z[i])?,
                FilterMode::Homogenized(d) => generator_with_drift(self.model, self.psi, x, d.bbar(x))?,
            };
            let h = self.obs.h.eval(x);
            let s1 = self.model.sigma_v(x);
            let second = 0.5 * d2 * s1 * s1 + 0.5 * p * h * h + d1 * s1 * h;
            term += l.exp()
                * (gen * dt + (p * h + d1 * s1) * dv + dt * p * self.obs.compensator(x)
                    + second * qv);
        }
        let mut w: Vec<f64> = logw_mid.iter().map(|l| l.exp()).collect();
        for e in events.iter().filter(|e| e.on_u3) {
            for (i, wi) in w.iter_mut().enumerate() {
                let lam = self.obs.lambda_checked(before.x[i], e.mark)?;
                term += self.psi.value(x_next[i]) * *wi * (lam - 1.0);
                *wi *= lam;
            }
        }
        self.integral += term / np;
        let rho_next = x_next
            .iter()
            .zip(&w)
            .map(|(&x, wi)| wi * self.psi.value(x))
            .sum::<f64>()
            / np;
        self.times.push(before.time + dt);
        self.residuals.push(rho_next - self.rho0 - self.integral);
        Ok(())
    }
}

/// Runs an unresampled Lévy filter and returns max_t |R_t| for `psi`.
pub fn zakai_residual_check(
    y: &ObservationPath,
    model: &ModelSpec,
    mode: FilterMode<'_>,
    obs: &LevyObservationModel,
    cfg: &FilterConfig,
    psi: TestFunction,
    correction: QvCorrection,
    seed: &SeedSpec,
) -> Result<f64> {
    if cfg.resample {
        return config_err("the residual identity needs resampling disabled");
    }
    let mut acc = ZakaiResidual::new(model, obs, psi, mode, y, correction)?;
    particle_filter_levy_observed(y, model, mode, obs, cfg, seed, &mut acc)?;
    Ok(acc.max_abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::observation::{LambdaFn, ObsFn};
    use crate::filters::particle::InitialLaw;
    use crate::kernel::{JumpMeasure, MarkLaw, MarkRegion, TimeGrid};
    use crate::model::Family;

    #[test]
    fn trivial_configuration_has_zero_residual() {
        let obs = LevyObservationModel::new(
            ObsFn::Zero,
            LambdaFn { base: 1.0, amp: 0.0 },
            JumpMeasure::new(2.0, MarkLaw::Uniform).unwrap(),
            MarkRegion::symmetric(0.9),
            1.0,
            2.0,
            0.0,
        )
        .unwrap();
        let model = ModelSpec::default_of(Family::LevyCorrelated);
        let g = TimeGrid::new(0.5, 250).unwrap();
        let y = ObservationPath::new(g, vec![0.01; 250], vec![]).unwrap();
        let mut cfg = FilterConfig::new(50, InitialLaw::PointMass(0.5));
        cfg.resample = false;
        cfg.phis = vec![TestFunction::One];
        for corr in [QvCorrection::Realized, QvCorrection::Nominal] {
            let r = zakai_residual_check(
                &y,
                &model,
                FilterMode::Epsilon(0.05),
                &obs,
                &cfg,
                TestFunction::One,
                corr,
                &SeedSpec::new(2),
            )
            .unwrap();
            assert!(r < 1e-12, "{r}");
        }
    }

    #[test]
    fn compensator_enters_with_the_weight_sign() {
        let obs = LevyObservationModel::new(
            ObsFn::Zero,
            LambdaFn { base: 0.5, amp: 0.0 },
            JumpMeasure::new(2.0, MarkLaw::Uniform).unwrap(),
            MarkRegion::symmetric(0.9),
            1.0,
            2.0,
            0.0,
        )
        .unwrap();
        let model = ModelSpec::default_of(Family::LevyCorrelated);
        let g = TimeGrid::new(0.5, 250).unwrap();
        let y = ObservationPath::new(g, vec![0.0; 250], vec![]).unwrap();
        let mut cfg = FilterConfig::new(20, InitialLaw::PointMass(0.5));
        cfg.resample = false;
        let r = zakai_residual_check(
            &y,
            &model,
            FilterMode::Epsilon(0.05),
            &obs,
            &cfg,
            TestFunction::One,
            QvCorrection::Realized,
            &SeedSpec::new(3),
        )
        .unwrap();
        assert!(r < 5.0 * g.dt(), "{r}");
    }
}
