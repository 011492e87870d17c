//! Observation models and observation-path simulation.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{config_err, Error, Result};
use crate::kernel::{BrownianPath, JumpMeasure, MarkLaw, MarkRegion, ThinningProposals, TimeGrid};

/// Observation functions R -> R from a fixed registry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ObsFn {
    Zero,
    Constant(f64),
    /// a * tanh(x).
    ScaledTanh(f64),
    /// x clipped to [-R, R].
    Clipped(f64),
}

impl ObsFn {
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "zero" {
            return Ok(Self::Zero);
        }
        let (kind, arg) = s
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("bad observation function `{s}`")))?;
        let v: f64 = arg
            .parse()
            .map_err(|_| Error::Config(format!("bad number in observation function `{s}`")))?;
        match kind {
            "const" => Ok(Self::Constant(v)),
            "tanh" => Ok(Self::ScaledTanh(v)),
            "clip" if v > 0.0 => Ok(Self::Clipped(v)),
            _ => config_err(format!(
                "unknown observation function `{s}` (zero, const:c, tanh:a, clip:R)"
            )),
        }
    }

    pub fn id(&self) -> String {
        match self {
            Self::Zero => "zero".into(),
            Self::Constant(c) => format!("const:{c}"),
            Self::ScaledTanh(a) => format!("tanh:{a}"),
            Self::Clipped(r) => format!("clip:{r}"),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c,
            Self::ScaledTanh(a) => a * x.tanh(),
            Self::Clipped(r) => x.clamp(-r, r),
        }
    }

    /// Declared sup-norm bound.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant(c) => c.abs(),
            Self::ScaledTanh(a) => a.abs(),
            Self::Clipped(r) => r,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Constant(c) if *c == 0.0)
    }
}

/// dY = h(X) dt + sigma3 dV + sigma4 dB with sigma3 sigma3' + sigma4 sigma4' = I.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorObservationModel {
    pub h: ObsFn,
    pub sigma3: DMatrix<f64>,
    pub sigma4: DMatrix<f64>,
    /// Symmetric square root of I - sigma3' sigma3.
    pub s_root: DMatrix<f64>,
}

impl SensorObservationModel {
    pub fn new(h: ObsFn, sigma3: DMatrix<f64>, sigma4: DMatrix<f64>) -> Result<Self> {
        let d = sigma3.nrows();
        if sigma4.nrows() != d {
            return config_err("sigma3 and sigma4 must have the same number of rows");
        }
        let total = &sigma3 * sigma3.transpose() + &sigma4 * sigma4.transpose();
        let ident = DMatrix::<f64>::identity(d, d);
        let gap = (total - ident).abs().max();
        if gap > 1e-12 {
            return config_err(format!(
                "sigma3 sigma3' + sigma4 sigma4' differs from I by {gap:e}"
            ));
        }
        let s_root = psd_sqrt(
            &(DMatrix::<f64>::identity(sigma3.ncols(), sigma3.ncols())
                - sigma3.transpose() * &sigma3),
        )?;
        for &x in &[-10.0, -1.0, 0.0, 0.5, 3.0, 10.0] {
            if h.eval(x).abs() > h.bound() + 1e-15 {
                return config_err(format!("observation function exceeds its bound at {x}"));
            }
        }
        Ok(Self {
            h,
            sigma3,
            sigma4,
            s_root,
        })
    }

    /// Scalar model with sigma4 = sqrt(1 - sigma3^2).
    pub fn scalar(h: ObsFn, sigma3: f64) -> Result<Self> {
        if !(sigma3.abs() <= 1.0) {
            return config_err(format!("|sigma3| must be <= 1, got {sigma3}"));
        }
        let s4 = (1.0 - sigma3 * sigma3).sqrt();
        Self::new(
            h,
            DMatrix::from_element(1, 1, sigma3),
            DMatrix::from_element(1, 1, s4),
        )
    }

    pub fn catalog() -> Self {
        Self::new(
            ObsFn::ScaledTanh(0.5),
            DMatrix::from_element(1, 1, 0.6),
            DMatrix::from_element(1, 1, 0.8),
        )
        .expect("catalog sensor model is valid")
    }

    /// (sigma3, sigma4, s) for the scalar case.
    pub fn scalar_parts(&self) -> Result<(f64, f64, f64)> {
        if self.sigma3.shape() != (1, 1) || self.sigma4.shape() != (1, 1) {
            return config_err("filters support scalar observations only (d = l = j = 1)");
        }
        Ok((self.sigma3[(0, 0)], self.sigma4[(0, 0)], self.s_root[(0, 0)]))
    }
}

/// Symmetric PSD square root by eigendecomposition; eigenvalues down to
/// -1e-10 are clamped to zero, anything more negative is rejected.
pub fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(a.clone());
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        if *v < -1e-10 {
            return config_err(format!("matrix is not positive semidefinite (eigenvalue {v})"));
        }
        *v = v.max(0.0).sqrt();
    }
    let q = &eig.eigenvectors;
    Ok(q * DMatrix::from_diagonal(&vals) * q.transpose())
}

/// lambda(t, x, u) = base + amp tanh(x) zeta(u) on U3 and `base` off U3,
/// with zeta(u) = clamp(2|u| - 1, -1, 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaFn {
    pub base: f64,
    pub amp: f64,
}

#[inline]
pub fn zeta(u: f64) -> f64 {
    (2.0 * u.abs() - 1.0).clamp(-1.0, 1.0)
}

/// Lévy observation model: dY = h(X) dt + dV + f3 dN~_lambda on U3 + g3 dN_lambda off U3,
/// with f3(s, u) = a3 u and g3(s, u) = g3 u.
#[derive(Clone, Debug, PartialEq)]
pub struct LevyObservationModel {
    pub h: ObsFn,
    pub lambda: LambdaFn,
    pub nu3: JumpMeasure,
    pub u3: MarkRegion,
    pub a3: f64,
    pub g3: f64,
    /// Gap between the lower envelope L(u) and lambda.
    pub margin: f64,
    p_u3: f64,
    zeta_u3: f64,
}

impl LevyObservationModel {
    pub fn new(
        h: ObsFn,
        lambda: LambdaFn,
        nu3: JumpMeasure,
        u3: MarkRegion,
        a3: f64,
        g3: f64,
        margin: f64,
    ) -> Result<Self> {
        if a3 == 0.0 {
            return config_err("f3 = a3 u needs a3 != 0 for mark recovery");
        }
        if !(margin >= 0.0) {
            return config_err("lower-envelope margin must be >= 0");
        }
        let lo = lambda.base - lambda.amp.abs();
        let hi = lambda.base + lambda.amp.abs();
        if !(lo - margin > 0.0 && hi <= 1.0) {
            return config_err(format!(
                "intensity range [{lo}, {hi}] with margin {margin} leaves (0, 1]"
            ));
        }
        let law = nu3.law;
        let outside = 1.0 - law.prob(u3);
        if outside > 1e-15 && g3 != 0.0 && g3.abs() <= a3.abs() {
            return config_err("need |g3| > |a3| so on-U3 and off-U3 jumps are distinguishable");
        }
        // The compensator of the U3 jump part must vanish so the continuous
        // observation part is observable.
        let m_u = law.expect_on(u3, |u| u);
        let m_uz = law.expect_on(u3, |u| u * zeta(u));
        if m_u.abs() > 1e-12 || (lambda.amp != 0.0 && m_uz.abs() > 1e-12) {
            return config_err(
                "int_U3 f3 lambda nu3 must vanish for every x (use a symmetric mark law and U3)",
            );
        }
        Ok(Self {
            h,
            lambda,
            nu3,
            u3,
            a3,
            g3,
            margin,
            p_u3: law.prob(u3),
            zeta_u3: law.expect_on(u3, zeta),
        })
    }

    pub fn catalog() -> Self {
        Self::new(
            ObsFn::ScaledTanh(1.0),
            LambdaFn {
                base: 0.5,
                amp: 0.3,
            },
            JumpMeasure {
                rate: 2.0,
                law: MarkLaw::Uniform,
            },
            MarkRegion::symmetric(0.9),
            1.0,
            2.0,
            0.01,
        )
        .expect("catalog Lévy observation model is valid")
    }

    #[inline]
    pub fn lambda_at(&self, x: f64, u: f64) -> f64 {
        if self.u3.contains(u) {
            self.lambda.base + self.lambda.amp * x.tanh() * zeta(u)
        } else {
            self.lambda.base
        }
    }

    /// lambda with the range check required before taking logs or thinning.
    pub fn lambda_checked(&self, x: f64, u: f64) -> Result<f64> {
        let l = self.lambda_at(x, u);
        if l > 0.0 && l <= 1.0 {
            Ok(l)
        } else {
            Err(Error::Model(format!("intensity {l} outside (0, 1] at x = {x}, u = {u}")))
        }
    }

    /// Lower envelope L(u) = base - |amp| |zeta(u)| - margin.
    pub fn lower(&self, u: f64) -> f64 {
        if self.u3.contains(u) {
            self.lambda.base - self.lambda.amp.abs() * zeta(u).abs() - self.margin
        } else {
            self.lambda.base - self.margin
        }
    }

    /// Uniform lower constant l = inf L.
    pub fn lower_const(&self) -> f64 {
        self.lambda.base - self.lambda.amp.abs() - self.margin
    }

    /// int_U3 (1 - lambda(x, u)) nu3(du), from precomputed mark moments.
    #[inline]
    pub fn compensator(&self, x: f64) -> f64 {
        self.nu3.rate
            * ((1.0 - self.lambda.base) * self.p_u3 - self.lambda.amp * x.tanh() * self.zeta_u3)
    }

    /// int_U3 |f3|^2 nu3.
    pub fn f3_square_integral(&self) -> f64 {
        self.a3 * self.a3 * self.nu3.rate * self.nu3.law.expect_on(self.u3, |u| u * u)
    }

    #[inline]
    pub fn jump_size(&self, u: f64) -> f64 {
        if self.u3.contains(u) {
            self.a3 * u
        } else {
            self.g3 * u
        }
    }

    /// Recovers (u, on U3) from an observed jump size.
    pub fn recover_mark(&self, jump: f64) -> Result<(f64, bool)> {
        let u = jump / self.a3;
        if self.u3.contains(u) {
            return Ok((u, true));
        }
        if self.g3 != 0.0 {
            let u = jump / self.g3;
            if !self.u3.contains(u) {
                return Ok((u, false));
            }
        }
        Err(Error::Model(format!("jump {jump} matches no mark")))
    }

    /// Checks l <= L(u) < lambda(x, u) <= 1 on a lattice of (x, u) points.
    pub fn check_envelope(&self) -> Result<()> {
        let l = self.lower_const();
        for i in 0..=40 {
            let x = -10.0 + 0.5 * i as f64;
            for j in 0..=40 {
                let u = -2.0 + 0.1 * j as f64;
                let lam = self.lambda_checked(x, u)?;
                let env = self.lower(u);
                if !(l <= env + 1e-15 && env < lam) {
                    return Err(Error::Model(format!(
                        "envelope violated at x = {x}, u = {u}: l = {l}, L = {env}, lambda = {lam}"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkedEvent {
    pub time: f64,
    pub mark: f64,
    pub jump: f64,
    pub on_u3: bool,
}

/// Continuous observation increments plus marked jump events.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationPath {
    pub grid: TimeGrid,
    pub dy: Vec<f64>,
    pub events: Vec<MarkedEvent>,
    cells: Vec<usize>,
}

impl ObservationPath {
    pub fn new(grid: TimeGrid, dy: Vec<f64>, events: Vec<MarkedEvent>) -> Result<Self> {
        if dy.len() != grid.steps() {
            return config_err(format!(
                "observation path has {} increments for {} steps",
                dy.len(),
                grid.steps()
            ));
        }
        let mut cells = vec![0usize; grid.steps() + 1];
        for e in &events {
            cells[grid.cell_of(e.time) + 1] += 1;
        }
        for k in 0..grid.steps() {
            cells[k + 1] += cells[k];
        }
        Ok(Self {
            grid,
            dy,
            events,
            cells,
        })
    }

    pub fn events_in_cell(&self, k: usize) -> &[MarkedEvent] {
        &self.events[self.cells[k]..self.cells[k + 1]]
    }

    /// Y(t_k), with Y(0) = 0.
    pub fn y_at(&self, k: usize) -> f64 {
        let t = self.grid.time(k);
        self.dy[..k].iter().sum::<f64>()
            + self
                .events
                .iter()
                .filter(|e| e.time <= t + 1e-12)
                .map(|e| e.jump)
                .sum::<f64>()
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let dy = self.dy.chunks(factor).map(|c| c.iter().sum()).collect();
        Self::new(grid, dy, self.events.clone())
    }
}

pub fn simulate_observation_sensor(
    x: &[f64],
    v: &BrownianPath,
    b: &BrownianPath,
    obs: &SensorObservationModel,
) -> Result<ObservationPath> {
    let grid = v.grid();
    if b.grid() != grid || x.len() != grid.steps() + 1 {
        return config_err("sensor observation: grid mismatch");
    }
    let (s3, s4, _) = obs.scalar_parts()?;
    let dt = grid.dt();
    let dy = (0..grid.steps())
        .map(|k| obs.h.eval(x[k]) * dt + s3 * v.increment(k)[0] + s4 * b.increment(k)[0])
        .collect();
    ObservationPath::new(grid, dy, Vec::new())
}

/// Thins the proposal stream with acceptance probability lambda(tau, X(tau-), u)
/// and assembles the observation. Jumps enter at the cell containing them,
/// so X(tau-) is the grid value at the cell's left end.
pub fn simulate_observation_levy(
    x: &[f64],
    v: &BrownianPath,
    proposals: &ThinningProposals,
    obs: &LevyObservationModel,
) -> Result<ObservationPath> {
    let grid = v.grid();
    if x.len() != grid.steps() + 1 {
        return config_err("Lévy observation: grid mismatch");
    }
    if proposals.stream.intensity() != obs.nu3.rate {
        return config_err("Lévy observation: proposals must run at the nu3 rate");
    }
    let dt = grid.dt();
    let dy = (0..grid.steps())
        .map(|k| obs.h.eval(x[k]) * dt + v.increment(k)[0])
        .collect();
    let mut events = Vec::new();
    for (e, &u01) in proposals.stream.events.iter().zip(&proposals.uniforms) {
        let k = grid.cell_of(e.time);
        let lam = obs.lambda_checked(x[k], e.mark)?;
        if u01 < lam {
            events.push(MarkedEvent {
                time: e.time,
                mark: e.mark,
                jump: obs.jump_size(e.mark),
                on_u3: obs.u3.contains(e.mark),
            });
        }
    }
    ObservationPath::new(grid, dy, events)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{sample_brownian, sample_thinning_proposals};
    use crate::rng::SeedSpec;

    #[test]
    fn catalog_models_validate() {
        let s = SensorObservationModel::catalog();
        let (s3, s4, sr) = s.scalar_parts().unwrap();
        assert!((s3 * s3 + s4 * s4 - 1.0).abs() < 1e-15);
        assert!((sr - 0.8).abs() < 1e-12);
        let l = LevyObservationModel::catalog();
        l.check_envelope().unwrap();
        assert!((l.lower_const() - 0.19).abs() < 1e-15);
    }

    #[test]
    fn sensor_noise_identity_is_enforced() {
        let bad = SensorObservationModel::new(
            ObsFn::Zero,
            DMatrix::from_element(1, 1, 0.6),
            DMatrix::from_element(1, 1, 0.7),
        );
        assert!(bad.is_err());
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-3]);
        assert!(psd_sqrt(&m).is_err());
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let r = psd_sqrt(&m).unwrap();
        assert!((&r * &r - m).abs().max() < 1e-12);
    }

    #[test]
    fn y_equals_b_without_signal() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let v = sample_brownian(g, 1, &SeedSpec::new(1)).unwrap();
        let b = sample_brownian(g, 1, &SeedSpec::new(2)).unwrap();
        let obs = SensorObservationModel::scalar(ObsFn::Zero, 0.0).unwrap();
        let y = simulate_observation_sensor(&[0.0; 101], &v, &b, &obs).unwrap();
        assert_eq!(y.dy, b.increments());
        assert_eq!(y.y_at(0), 0.0);
    }

    #[test]
    fn marks_are_recovered_from_jumps() {
        let obs = LevyObservationModel::catalog();
        let g = TimeGrid::new(5.0, 500).unwrap();
        let v = sample_brownian(g, 1, &SeedSpec::new(3)).unwrap();
        let p = sample_thinning_proposals(g, obs.nu3, &SeedSpec::new(4)).unwrap();
        let y = simulate_observation_levy(&vec![0.3; 501], &v, &p, &obs).unwrap();
        assert!(!y.events.is_empty());
        for e in &y.events {
            let (u, on) = obs.recover_mark(e.jump).unwrap();
            assert_eq!(on, e.on_u3);
            assert!((u - e.mark).abs() <= 1e-15 * e.mark.abs().max(1.0));
        }
    }

    #[test]
    fn compensator_matches_quadrature() {
        let obs = LevyObservationModel::catalog();
        for &x in &[-2.0, 0.0, 0.7] {
            let q = obs.nu3.rate * obs.nu3.law.expect_on(obs.u3, |u| 1.0 - obs.lambda_at(x, u));
            assert!((obs.compensator(x) - q).abs() < 1e-12);
        }
    }

    #[test]
    fn asymmetric_marks_are_rejected() {
        let r = LevyObservationModel::new(
            ObsFn::Zero,
            LambdaFn { base: 0.5, amp: 0.0 },
            JumpMeasure::new(1.0, MarkLaw::PointMass(0.5)).unwrap(),
            MarkRegion::symmetric(0.9),
            1.0,
            2.0,
            0.0,
        );
        assert!(r.is_err());
    }
}
