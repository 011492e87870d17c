//! Euler-Maruyama integration of the slow-fast system, the frozen fast
//! equation, the auxiliary (Khasminskii) fast process and the averaged slow
//! equation. Jumps falling in a cell are applied at the cell's end in order of
//! occurrence, compensators as a left-point drift.

use crate::averaging::DriftEvaluator;
use crate::error::{config_err, Error, Result};
use crate::kernel::{
    fnv_checksum, sample_brownian, sample_jump_stream, BrownianPath, JumpStream, TimeGrid,
};
use crate::model::ModelSpec;
use crate::rng::SeedSpec;
use crate::stats::Estimate;

/// Stream indices below a replication's seed.
pub mod stream {
    pub const V: u64 = 0;
    pub const W: u64 = 1;
    pub const B: u64 = 2;
    pub const J1: u64 = 3;
    pub const J2: u64 = 4;
    pub const J_LAMBDA: u64 = 5;
}

/// One realization of every driving noise on a common grid.
#[derive(Clone, Debug)]
pub struct NoiseBundle {
    pub grid: TimeGrid,
    pub v: BrownianPath,
    pub w: BrownianPath,
    pub b: BrownianPath,
    pub j1: JumpStream,
    /// Fast jumps, already at intensity `nu2 / eps`.
    pub j2: JumpStream,
}

impl NoiseBundle {
    pub fn sample(model: &ModelSpec, eps: f64, grid: TimeGrid, seed: &SeedSpec) -> Result<Self> {
        check_eps(eps)?;
        Ok(Self {
            grid,
            v: sample_brownian(grid, 1, &seed.child(stream::V))?,
            w: sample_brownian(grid, 1, &seed.child(stream::W))?,
            b: sample_brownian(grid, 1, &seed.child(stream::B))?,
            j1: sample_jump_stream(grid, model.nu1(), 1.0, &seed.child(stream::J1))?,
            j2: sample_jump_stream(grid, model.nu2(), 1.0 / eps, &seed.child(stream::J2))?,
        })
    }

    /// All increments zero and no jumps.
    pub fn quiet(model: &ModelSpec, eps: f64, grid: TimeGrid) -> Self {
        Self {
            grid,
            v: BrownianPath::zeros(grid, 1),
            w: BrownianPath::zeros(grid, 1),
            b: BrownianPath::zeros(grid, 1),
            j1: JumpStream::empty(grid, model.nu1(), 1.0),
            j2: JumpStream::empty(grid, model.nu2(), 1.0 / eps),
        }
    }

    /// Checksum of the noises shared by the original and averaged slow equations.
    pub fn slow_checksum(&self) -> u64 {
        slow_checksum(&self.v, &self.b, &self.j1)
    }

    fn check_grid(&self) -> Result<()> {
        let g = self.grid;
        let same = self.v.grid() == g
            && self.w.grid() == g
            && self.b.grid() == g
            && self.v.dim() == 1
            && self.w.dim() == 1
            && self.b.dim() == 1;
        if same {
            Ok(())
        } else {
            config_err("noise components do not share the bundle grid")
        }
    }
}

fn slow_checksum(v: &BrownianPath, b: &BrownianPath, j1: &JumpStream) -> u64 {
    fnv_checksum(
        v.increments()
            .iter()
            .chain(b.increments())
            .copied()
            .chain(std::iter::once(f64::from_bits(j1.checksum()))),
    )
}

/// Trajectory on the grid; `z` is absent for averaged paths.
#[derive(Clone, Debug, PartialEq)]
pub struct PathPair {
    pub grid: TimeGrid,
    pub x: Vec<f64>,
    pub z: Option<Vec<f64>>,
    /// Checksum of the slow-equation noise (V, B, J1) the path consumed.
    pub noise_checksum: u64,
}

pub fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return config_err(format!("eps must lie in (0, 1], got {eps}"));
    }
    Ok(())
}

/// dt <= eps / 10.
pub fn check_stability(dt: f64, eps: f64) -> Result<()> {
    check_eps(eps)?;
    let limit = eps / 10.0;
    if dt > limit * (1.0 + 1e-9) {
        return Err(Error::Stability { dt, eps, limit });
    }
    Ok(())
}

#[inline]
fn finite(v: f64, step: usize) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Divergence { step })
    }
}

/// One Euler step of the slow equation with drift `drift`, from (t_k, x).
#[inline]
pub fn slow_step(
    model: &ModelSpec,
    drift: f64,
    x: f64,
    dt: f64,
    dv: f64,
    db: f64,
    jumps: &[crate::kernel::JumpEvent],
) -> f64 {
    let mut next = x + (drift - model.f1_compensator(x)) * dt
        + model.sigma_v(x) * dv
        + model.sigma_b(x) * db;
    for e in jumps {
        next += model.f1(x, e.mark);
    }
    next
}

/// One Euler step of the fast equation at time scale `eps` (eps = 1 for the
/// frozen equation), with the slow argument `x`.
#[inline]
pub fn fast_step(
    model: &ModelSpec,
    eps: f64,
    x: f64,
    z: f64,
    dt: f64,
    dw: f64,
    jumps: &[crate::kernel::JumpEvent],
) -> f64 {
    let mut next = z + (model.b2(x, z) - model.f2_compensator(x, z)) * dt / eps
        + model.sigma2(x, z) * dw / eps.sqrt();
    for e in jumps {
        next += model.f2(x, z, e.mark);
    }
    next
}

pub fn simulate_slow_fast(model: &ModelSpec, eps: f64, noise: &NoiseBundle) -> Result<PathPair> {
    noise.check_grid()?;
    let grid = noise.grid;
    let dt = grid.dt();
    check_stability(dt, eps)?;
    let n = grid.steps();
    let mut x = Vec::with_capacity(n + 1);
    let mut z = Vec::with_capacity(n + 1);
    let (mut xk, mut zk) = (model.params.x0, model.params.z0);
    x.push(xk);
    z.push(zk);
    for k in 0..n {
        let xn = slow_step(
            model,
            model.b1(xk, zk),
            xk,
            dt,
            noise.v.increment(k)[0],
            noise.b.increment(k)[0],
            noise.j1.events_in_cell(k),
        );
        let zn = fast_step(
            model,
            eps,
            xk,
            zk,
            dt,
            noise.w.increment(k)[0],
            noise.j2.events_in_cell(k),
        );
        xk = finite(xn, k + 1)?;
        zk = finite(zn, k + 1)?;
        x.push(xk);
        z.push(zk);
    }
    Ok(PathPair {
        grid,
        x,
        z: Some(z),
        noise_checksum: noise.slow_checksum(),
    })
}

/// Fast equation with the slow state frozen at `x`, on time scale 1. The jump
/// stream must carry intensity nu2 (rate scale 1).
pub fn simulate_frozen_fast(
    model: &ModelSpec,
    x: f64,
    z0: f64,
    w: &BrownianPath,
    j2: &JumpStream,
) -> Result<Vec<f64>> {
    let grid = w.grid();
    let dt = grid.dt();
    check_stability(dt, 1.0)?;
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut z = z0;
    out.push(z);
    for k in 0..grid.steps() {
        z = finite(
            fast_step(model, 1.0, x, z, dt, w.increment(k)[0], j2.events_in_cell(k)),
            k + 1,
        )?;
        out.push(z);
    }
    Ok(out)
}

/// Auxiliary fast process: on each cell [k delta, (k+1) delta) the slow
/// argument is frozen at X(k delta) and the process restarts from Z(k delta).
/// Uses the W and J2 increments of `noise`, which must be the ones that drove
/// `path`.
pub fn simulate_auxiliary(
    model: &ModelSpec,
    eps: f64,
    delta: f64,
    path: &PathPair,
    noise: &NoiseBundle,
) -> Result<Vec<f64>> {
    noise.check_grid()?;
    let grid = noise.grid;
    if path.grid != grid {
        return config_err("auxiliary process: path and noise grids differ");
    }
    let z = path
        .z
        .as_ref()
        .ok_or_else(|| Error::Config("auxiliary process needs the fast path".into()))?;
    let dt = grid.dt();
    check_stability(dt, eps)?;
    let cell = grid.steps_for(delta)?;
    let mut out = Vec::with_capacity(grid.steps() + 1);
    let mut zh = z[0];
    let mut xf = path.x[0];
    out.push(zh);
    for k in 0..grid.steps() {
        if k % cell == 0 {
            zh = z[k];
            xf = path.x[k];
        }
        zh = finite(
            fast_step(
                model,
                eps,
                xf,
                zh,
                dt,
                noise.w.increment(k)[0],
                noise.j2.events_in_cell(k),
            ),
            k + 1,
        )?;
        out.push(zh);
    }
    Ok(out)
}

/// Averaged slow equation driven by the same V, B and J1 as the original.
pub fn simulate_homogenized(
    model: &ModelSpec,
    drift: &dyn DriftEvaluator,
    grid: TimeGrid,
    v: &BrownianPath,
    b: &BrownianPath,
    j1: &JumpStream,
) -> Result<PathPair> {
    if v.grid() != grid || b.grid() != grid || v.dim() != 1 || b.dim() != 1 {
        return config_err("averaged equation: noise grid mismatch");
    }
    let dt = grid.dt();
    let n = grid.steps();
    let mut x = Vec::with_capacity(n + 1);
    let mut xk = model.params.x0;
    x.push(xk);
    for k in 0..n {
        let xn = slow_step(
            model,
            drift.bbar(xk),
            xk,
            dt,
            v.increment(k)[0],
            b.increment(k)[0],
            j1.events_in_cell(k),
        );
        xk = finite(xn, k + 1)?;
        x.push(xk);
    }
    Ok(PathPair {
        grid,
        x,
        z: None,
        noise_checksum: slow_checksum(v, b, j1),
    })
}

/// max_k |a_k - b_k|^2 over two paths on one grid.
pub fn sup_sq_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return config_err(format!(
            "paths have different lengths ({} vs {})",
            a.len(),
            b.len()
        ));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .fold(0.0, f64::max))
}

/// Monte Carlo estimate of E sup_t |X^eps - X^0|^2 over coupled replications.
pub fn strong_error(original: &[PathPair], averaged: &[PathPair]) -> Result<Estimate> {
    if original.len() != averaged.len() {
        return config_err(format!(
            "strong error: {} original vs {} averaged replications",
            original.len(),
            averaged.len()
        ));
    }
    let mut sups = Vec::with_capacity(original.len());
    for (a, b) in original.iter().zip(averaged) {
        if a.grid != b.grid {
            return config_err("strong error: paths on different grids");
        }
        if a.noise_checksum != b.noise_checksum {
            return config_err("strong error: paths were not driven by the same slow noise");
        }
        sups.push(sup_sq_distance(&a.x, &b.x)?);
    }
    Ok(Estimate::from_samples(&sups))
}
