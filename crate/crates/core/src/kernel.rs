//! Time grids and the driving noises: Brownian increments and marked
//! compound-Poisson jump streams, all sampled from addressed random streams.

use std::ops::Range;

use crate::error::{config_err, Result};
use crate::quadrature::{hermite_64, legendre_64};
use crate::rng::{open_unit, std_exp, std_normal, SeedSpec, StreamRng};

/// Uniform grid t_k = k * dt on [0, T].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, steps: usize) -> Result<Self> {
        if steps == 0 {
            return config_err("time grid needs at least one step");
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return config_err(format!("time horizon must be positive, got {horizon}"));
        }
        Ok(Self { horizon, steps })
    }

    /// Grid with the given step, which must divide the horizon.
    pub fn with_dt(horizon: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return config_err(format!("dt must be positive, got {dt}"));
        }
        let n = (horizon / dt).round();
        if n < 1.0 || ((n * dt - horizon).abs() > 1e-9 * horizon) {
            return config_err(format!("dt = {dt} does not divide T = {horizon}"));
        }
        Self::new(horizon, n as usize)
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Number of grid steps spanned by `width`; errors unless `width` is a
    /// positive integer multiple of dt.
    pub fn steps_for(&self, width: f64) -> Result<usize> {
        let dt = self.dt();
        let ratio = width / dt;
        let k = ratio.round();
        if !(k >= 1.0) || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
            return config_err(format!(
                "partition width {width} is not an integer multiple of dt = {dt}"
            ));
        }
        Ok(k as usize)
    }

    /// Grid index of the cell (t_k, t_{k+1}] containing `t`.
    pub fn cell_of(&self, t: f64) -> usize {
        let k = (t / self.dt()).ceil() as isize - 1;
        k.clamp(0, self.steps as isize - 1) as usize
    }

    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        if factor == 0 || self.steps % factor != 0 {
            return config_err(format!(
                "cannot coarsen {} steps by factor {factor}",
                self.steps
            ));
        }
        Self::new(self.horizon, self.steps / factor)
    }
}

/// Closed interval of the mark space.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MarkRegion {
    pub lo: f64,
    pub hi: f64,
}

impl MarkRegion {
    pub const ALL: MarkRegion = MarkRegion {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn symmetric(radius: f64) -> Self {
        Self {
            lo: -radius,
            hi: radius,
        }
    }

    pub fn contains(&self, u: f64) -> bool {
        u >= self.lo && u <= self.hi
    }
}

/// Mark distributions available to finite Lévy measures nu = rate * law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MarkLaw {
    /// Uniform on (-1, 1).
    Uniform,
    /// Standard normal.
    Normal,
    /// Dirac mass at the given mark.
    PointMass(f64),
}

impl MarkLaw {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            other => match other.strip_prefix("point:") {
                Some(v) => v
                    .trim()
                    .parse()
                    .map(Self::PointMass)
                    .map_err(|_| crate::Error::Config(format!("bad point-mass mark `{v}`"))),
                None => config_err(format!(
                    "unknown mark law `{other}` (expected uniform, normal or point:<v>)"
                )),
            },
        }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Uniform => "uniform".into(),
            Self::Normal => "normal".into(),
            Self::PointMass(v) => format!("point:{v}"),
        }
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        match *self {
            Self::Uniform => 2.0 * open_unit(rng) - 1.0,
            Self::Normal => std_normal(rng),
            Self::PointMass(v) => v,
        }
    }

    /// Integral of `f` against the law.
    pub fn expect(&self, f: impl FnMut(f64) -> f64) -> f64 {
        self.expect_on(MarkRegion::ALL, f)
    }

    /// Integral of `f` against the law restricted to `region`.
    pub fn expect_on(&self, region: MarkRegion, mut f: impl FnMut(f64) -> f64) -> f64 {
        match *self {
            Self::Uniform => {
                let lo = region.lo.max(-1.0);
                let hi = region.hi.min(1.0);
                if hi <= lo {
                    return 0.0;
                }
                0.5 * legendre_64().integrate(lo, hi, f)
            }
            Self::Normal => {
                if region == MarkRegion::ALL {
                    return hermite_64().expect_normal(0.0, 1.0, f);
                }
                let lo = region.lo.max(-12.0);
                let hi = region.hi.min(12.0);
                if hi <= lo {
                    return 0.0;
                }
                let norm = (2.0 * std::f64::consts::PI).sqrt().recip();
                legendre_64().integrate(lo, hi, |u| f(u) * norm * (-0.5 * u * u).exp())
            }
            Self::PointMass(v) => {
                if region.contains(v) {
                    f(v)
                } else {
                    0.0
                }
            }
        }
    }

    /// Exact mean of the law.
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Uniform | Self::Normal => 0.0,
            Self::PointMass(v) => v,
        }
    }

    /// Exact second moment of the law.
    pub fn second_moment(&self) -> f64 {
        match *self {
            Self::Uniform => 1.0 / 3.0,
            Self::Normal => 1.0,
            Self::PointMass(v) => v * v,
        }
    }

    pub fn prob(&self, region: MarkRegion) -> f64 {
        self.expect_on(region, |_| 1.0)
    }
}

/// Finite Lévy measure nu = rate * law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpMeasure {
    pub rate: f64,
    pub law: MarkLaw,
}

impl JumpMeasure {
    pub fn new(rate: f64, law: MarkLaw) -> Result<Self> {
        if !(rate >= 0.0 && rate.is_finite()) {
            return config_err(format!("jump rate must be finite and >= 0, got {rate}"));
        }
        Ok(Self { rate, law })
    }

    pub fn none() -> Self {
        Self {
            rate: 0.0,
            law: MarkLaw::Uniform,
        }
    }

    /// Integral of `f` against nu.
    pub fn integrate(&self, f: impl FnMut(f64) -> f64) -> f64 {
        if self.rate == 0.0 {
            0.0
        } else {
            self.rate * self.law.expect(f)
        }
    }
}

/// Increments of an l-dimensional Brownian motion on a grid, stored row-major
/// (`steps x dim`).
#[derive(Clone, Debug, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    dim: usize,
    increments: Vec<f64>,
}

/// Steps per independent sub-stream.
const BROWNIAN_BLOCK: usize = 4096;

impl BrownianPath {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        Self {
            grid,
            dim,
            increments: vec![0.0; grid.steps() * dim],
        }
    }

    pub fn from_increments(grid: TimeGrid, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if increments.len() != grid.steps() * dim {
            return config_err(format!(
                "expected {} increments, got {}",
                grid.steps() * dim,
                increments.len()
            ));
        }
        Ok(Self {
            grid,
            dim,
            increments,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Path value W(t_k); W(t_0) = 0.
    pub fn value_at(&self, k: usize) -> Vec<f64> {
        let mut w = vec![0.0; self.dim];
        for j in 0..k {
            for (wi, di) in w.iter_mut().zip(self.increment(j)) {
                *wi += di;
            }
        }
        w
    }

    /// Sums consecutive groups of `factor` increments.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsen(factor)?;
        let mut out = vec![0.0; grid.steps() * self.dim];
        for k in 0..self.grid.steps() {
            let dst = k / factor;
            for i in 0..self.dim {
                out[dst * self.dim + i] += self.increments[k * self.dim + i];
            }
        }
        Self::from_increments(grid, self.dim, out)
    }

    pub fn checksum(&self) -> u64 {
        fnv_checksum(self.increments.iter().copied())
    }
}

/// Samples `dim` independent Brownian motions on `grid`.
pub fn sample_brownian(grid: TimeGrid, dim: usize, seed: &SeedSpec) -> Result<BrownianPath> {
    if dim == 0 {
        return config_err("Brownian dimension must be >= 1");
    }
    let sd = grid.dt().sqrt();
    let n = grid.steps() * dim;
    let mut increments = Vec::with_capacity(n);
    let per_block = BROWNIAN_BLOCK * dim;
    let mut block = 0u64;
    while increments.len() < n {
        let mut rng = seed.child(block).rng();
        let take = per_block.min(n - increments.len());
        for _ in 0..take {
            increments.push(sd * std_normal(&mut rng));
        }
        block += 1;
    }
    BrownianPath::from_increments(grid, dim, increments)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JumpEvent {
    pub time: f64,
    pub mark: f64,
}

/// Event times and marks of a compound-Poisson stream with intensity
/// `rate_scale * base_rate` and i.i.d. marks from `mark_law`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpStream {
    pub events: Vec<JumpEvent>,
    pub base_rate: f64,
    pub rate_scale: f64,
    pub mark_law: MarkLaw,
    cells: Vec<usize>,
}

impl JumpStream {
    pub fn empty(grid: TimeGrid, measure: JumpMeasure, rate_scale: f64) -> Self {
        Self::from_events(grid, Vec::new(), measure, rate_scale)
    }

    pub fn from_events(
        grid: TimeGrid,
        events: Vec<JumpEvent>,
        measure: JumpMeasure,
        rate_scale: f64,
    ) -> Self {
        let mut cells = vec![0usize; grid.steps() + 1];
        for e in &events {
            cells[grid.cell_of(e.time) + 1] += 1;
        }
        for k in 0..grid.steps() {
            cells[k + 1] += cells[k];
        }
        Self {
            events,
            base_rate: measure.rate,
            rate_scale,
            mark_law: measure.law,
            cells,
        }
    }

    pub fn intensity(&self) -> f64 {
        self.base_rate * self.rate_scale
    }

    pub fn measure(&self) -> JumpMeasure {
        JumpMeasure {
            rate: self.base_rate,
            law: self.mark_law,
        }
    }

    /// Index range of the events falling in grid cell (t_k, t_{k+1}].
    #[inline]
    pub fn cell(&self, k: usize) -> Range<usize> {
        self.cells[k]..self.cells[k + 1]
    }

    pub fn events_in_cell(&self, k: usize) -> &[JumpEvent] {
        &self.events[self.cell(k)]
    }

    /// Number of events in (0, t].
    pub fn count_until(&self, t: f64) -> usize {
        self.events.partition_point(|e| e.time <= t)
    }

    /// Re-indexes the events onto a coarser grid.
    pub fn regrid(&self, grid: TimeGrid) -> Self {
        Self::from_events(grid, self.events.clone(), self.measure(), self.rate_scale)
    }

    pub fn checksum(&self) -> u64 {
        fnv_checksum(self.events.iter().flat_map(|e| [e.time, e.mark]))
    }
}

/// Samples a homogeneous Poisson stream on (0, T] at intensity
/// `rate_scale * measure.rate` with i.i.d. marks.
pub fn sample_jump_stream(
    grid: TimeGrid,
    measure: JumpMeasure,
    rate_scale: f64,
    seed: &SeedSpec,
) -> Result<JumpStream> {
    if !(measure.rate >= 0.0) {
        return config_err(format!("negative jump rate {}", measure.rate));
    }
    if !(rate_scale > 0.0 && rate_scale.is_finite()) {
        return config_err(format!("rate scale must be positive, got {rate_scale}"));
    }
    let intensity = measure.rate * rate_scale;
    let mut events = Vec::new();
    if intensity > 0.0 {
        let mut times = seed.child(0).rng();
        let mut marks = seed.child(1).rng();
        let mut t = 0.0;
        loop {
            let gap = std_exp(&mut times) / intensity;
            if gap <= 0.0 {
                continue;
            }
            t += gap;
            if t > grid.horizon() {
                break;
            }
            events.push(JumpEvent {
                time: t,
                mark: measure.law.sample(&mut marks),
            });
        }
    }
    Ok(JumpStream::from_events(grid, events, measure, rate_scale))
}

/// Compensated jump integral
/// sum_events g(tau, u) - int_0^T int g(s, u) nu(du) ds,
/// with the time integral taken as a left Riemann sum on the grid and the mark
/// integral by quadrature over the stream's mark law.
pub fn compensated_integral(
    stream: &JumpStream,
    grid: TimeGrid,
    mut g: impl FnMut(f64, f64) -> f64,
) -> f64 {
    let jumps: f64 = stream.events.iter().map(|e| g(e.time, e.mark)).sum();
    let intensity = stream.intensity();
    if intensity == 0.0 {
        return jumps;
    }
    let dt = grid.dt();
    let mut compensator = 0.0;
    for k in 0..grid.steps() {
        let t = grid.time(k);
        compensator += dt * intensity * stream.mark_law.expect(|u| g(t, u));
    }
    jumps - compensator
}

/// Proposal stream for thinning a state-dependent intensity: events at the
/// dominating rate plus one acceptance uniform per event.
#[derive(Clone, Debug, PartialEq)]
pub struct ThinningProposals {
    pub stream: JumpStream,
    pub uniforms: Vec<f64>,
}

pub fn sample_thinning_proposals(
    grid: TimeGrid,
    measure: JumpMeasure,
    seed: &SeedSpec,
) -> Result<ThinningProposals> {
    let stream = sample_jump_stream(grid, measure, 1.0, &seed.child(0))?;
    let mut rng = seed.child(1).rng();
    let uniforms = stream.events.iter().map(|_| open_unit(&mut rng)).collect();
    Ok(ThinningProposals { stream, uniforms })
}

/// FNV-1a over the bit patterns of a sequence of floats.
pub fn fnv_checksum(values: impl Iterator<Item = f64>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for v in values {
        for b in v.to_bits().to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_rejects_zero_steps() {
        assert!(TimeGrid::new(1.0, 0).is_err());
        assert!(TimeGrid::new(0.0, 10).is_err());
    }

    #[test]
    fn steps_for_checks_alignment() {
        let g = TimeGrid::new(1.0, 1000).unwrap();
        assert_eq!(g.steps_for(0.215).unwrap(), 215);
        assert!(g.steps_for(0.2154).is_err());
        assert!(g.steps_for(0.0).is_err());
    }

    #[test]
    fn cell_of_uses_half_open_cells() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        assert_eq!(g.cell_of(0.1), 0);
        assert_eq!(g.cell_of(0.1000001), 1);
        assert_eq!(g.cell_of(1.0), 9);
        assert_eq!(g.cell_of(1e-9), 0);
    }

    #[test]
    fn brownian_is_deterministic_and_starts_at_zero() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let s = SeedSpec::new(3);
        let a = sample_brownian(g, 1, &s).unwrap();
        let b = sample_brownian(g, 1, &s).unwrap();
        assert_eq!(a.increments(), b.increments());
        assert_eq!(a.value_at(0), vec![0.0]);
        assert!(sample_brownian(g, 0, &s).is_err());
    }

    #[test]
    fn zero_rate_stream_is_empty() {
        let g = TimeGrid::new(1.0, 100).unwrap();
        let s = sample_jump_stream(g, JumpMeasure::none(), 1.0, &SeedSpec::new(1)).unwrap();
        assert!(s.events.is_empty());
        let neg = JumpMeasure {
            rate: -1.0,
            law: MarkLaw::Uniform,
        };
        assert!(sample_jump_stream(g, neg, 1.0, &SeedSpec::new(1)).is_err());
    }

    #[test]
    fn events_are_increasing_and_indexed_by_cell() {
        let g = TimeGrid::new(2.0, 50).unwrap();
        let m = JumpMeasure::new(30.0, MarkLaw::Normal).unwrap();
        let s = sample_jump_stream(g, m, 1.0, &SeedSpec::new(9)).unwrap();
        assert!(s.events.windows(2).all(|w| w[0].time < w[1].time));
        let mut seen = 0;
        for k in 0..g.steps() {
            for e in s.events_in_cell(k) {
                assert!(e.time > g.time(k) - 1e-12 && e.time <= g.time(k + 1) + 1e-12);
                seen += 1;
            }
        }
        assert_eq!(seen, s.events.len());
    }

    #[test]
    fn compensated_integral_trivial_cases() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let m = JumpMeasure::new(3.0, MarkLaw::Uniform).unwrap();
        let empty = JumpStream::empty(g, m, 1.0);
        assert!((compensated_integral(&empty, g, |_, _| 1.0) + 3.0).abs() < 1e-12);
        let s = sample_jump_stream(g, m, 1.0, &SeedSpec::new(5)).unwrap();
        assert_eq!(compensated_integral(&s, g, |_, _| 0.0), 0.0);
        let v = compensated_integral(&s, g, |_, _| 1.0);
        assert!((v - (s.events.len() as f64 - 3.0)).abs() < 1e-12);
    }

    #[test]
    fn mark_law_moments() {
        assert!((MarkLaw::Uniform.expect(|u| u * u) - 1.0 / 3.0).abs() < 1e-14);
        assert!((MarkLaw::Normal.expect(|u| u * u) - 1.0).abs() < 1e-12);
        assert_eq!(MarkLaw::PointMass(0.4).expect(|u| u), 0.4);
        let r = MarkRegion::symmetric(0.5);
        assert!((MarkLaw::Uniform.prob(r) - 0.5).abs() < 1e-14);
        let p = MarkLaw::Normal.prob(MarkRegion::symmetric(1.0));
        assert!((p - 0.682_689_492_137_085_9).abs() < 1e-12);
        assert_eq!(MarkLaw::parse("point:0.25").unwrap(), MarkLaw::PointMass(0.25));
        assert!(MarkLaw::parse("cauchy").is_err());
    }

    #[test]
    fn coarsen_sums_increments() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let b = sample_brownian(g, 2, &SeedSpec::new(1)).unwrap();
        let c = b.coarsen(4).unwrap();
        assert_eq!(c.grid().steps(), 2);
        let fine_end = b.value_at(8);
        let coarse_end = c.value_at(2);
        for (f, c) in fine_end.iter().zip(&coarse_end) {
            assert!((f - c).abs() < 1e-14);
        }
        assert!(b.coarsen(3).is_err());
    }
}
