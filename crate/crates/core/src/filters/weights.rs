//! Girsanov densities along a known signal path.

use super::observation::{LevyObservationModel, ObsFn, ObservationPath};
use crate::error::{config_err, Error, Result};

fn check_len(x: &[f64], y: &ObservationPath) -> Result<()> {
    if x.len() != y.grid.steps() + 1 {
        return config_err(format!(
            "signal has {} points for a {}-step observation",
            x.len(),
            y.grid.steps()
        ));
    }
    Ok(())
}

/// log gamma at every grid time, left-point Itô sums.
pub fn girsanov_weight_sensor(x: &[f64], y: &ObservationPath, h: ObsFn) -> Result<Vec<f64>> {
    check_len(x, y)?;
    let dt = y.grid.dt();
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(acc);
    for (k, dy) in y.dy.iter().enumerate() {
        let hk = h.eval(x[k]);
        acc += hk * dy - 0.5 * hk * hk * dt;
        out.push(acc);
    }
    Ok(out)
}

/// Closed-form log lambda at every grid time. `y.dy` must hold the continuous
/// part of the observation; U3 events are charged at the left grid value.
pub fn likelihood_levy(
    x: &[f64],
    y: &ObservationPath,
    obs: &LevyObservationModel,
) -> Result<Vec<f64>> {
    check_len(x, y)?;
    let dt = y.grid.dt();
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(acc);
    for k in 0..y.grid.steps() {
        let xk = x[k];
        let hk = obs.h.eval(xk);
        acc += hk * y.dy[k] - 0.5 * hk * hk * dt + dt * obs.compensator(xk);
        for e in y.events_in_cell(k).iter().filter(|e| e.on_u3) {
            acc += obs.lambda_checked(xk, e.mark)?.ln();
        }
        out.push(acc);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LikelihoodScheme {
    Euler,
    Milstein,
}

/// log lambda from a direct discretization of
/// d lambda = lambda h dV + lambda int (lambda(x, u) - 1) N~(ds, du).
pub fn likelihood_levy_sde(
    x: &[f64],
    y: &ObservationPath,
    obs: &LevyObservationModel,
    scheme: LikelihoodScheme,
) -> Result<Vec<f64>> {
    check_len(x, y)?;
    let dt = y.grid.dt();
    let mut out = Vec::with_capacity(x.len());
    let mut acc = 0.0;
    out.push(acc);
    for k in 0..y.grid.steps() {
        let xk = x[k];
        let a = obs.h.eval(xk);
        let dv = y.dy[k];
        let mut factor = 1.0 + a * dv + dt * obs.compensator(xk);
        if scheme == LikelihoodScheme::Milstein {
            factor += 0.5 * a * a * (dv * dv - dt);
        }
        for e in y.events_in_cell(k).iter().filter(|e| e.on_u3) {
            factor *= obs.lambda_checked(xk, e.mark)?;
        }
        if !(factor > 0.0) {
            return Err(Error::Model(format!(
                "likelihood step factor {factor} is not positive at step {k}"
            )));
        }
        acc += factor.ln();
        out.push(acc);
    }
    Ok(out)
}
