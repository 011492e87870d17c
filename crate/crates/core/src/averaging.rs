//! Invariant-law sampling of the frozen fast process and the averaged slow
//! drift, with a node-grid cache for the averaged equation.

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use log::warn;
use rayon::prelude::*;

use crate::error::{config_err, Error, Result};
use crate::kernel::{JumpEvent, MarkLaw};
use crate::model::ModelSpec;
use crate::rng::{std_exp, std_normal, SeedSpec, StreamRng};
use crate::sde::fast_step;
use crate::stats::Estimate;

/// Averaged slow drift as seen by the averaged-equation integrator.
pub trait DriftEvaluator: Sync {
    fn bbar(&self, x: f64) -> f64;
}

/// Reference averaged drift from the model's closed form or quadrature.
#[derive(Clone, Debug)]
pub struct ClosedFormDrift {
    model: ModelSpec,
}

impl ClosedFormDrift {
    pub fn new(model: ModelSpec) -> Self {
        Self { model }
    }
}

impl DriftEvaluator for ClosedFormDrift {
    fn bbar(&self, x: f64) -> f64 {
        self.model
            .bbar_reference(x)
            .expect("reference drift needs kappa > 0")
    }
}

/// The slow drift itself, for models whose slow drift ignores the fast state.
#[derive(Clone, Debug)]
pub struct FastIndependentDrift {
    model: ModelSpec,
}

impl FastIndependentDrift {
    pub fn new(model: ModelSpec) -> Result<Self> {
        if model.slow_depends_on_fast() {
            return config_err("slow drift depends on the fast state");
        }
        Ok(Self { model })
    }
}

impl DriftEvaluator for FastIndependentDrift {
    fn bbar(&self, x: f64) -> f64 {
        self.model.b1(x, 0.0)
    }
}

/// Sampling controls for the frozen fast process. `None` selects the
/// defaults tied to the dissipativity constant M: burn-in 10/M and one sample
/// every 1/(M dt) steps.
#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub dt: f64,
    pub horizon: f64,
    pub burn_in: Option<f64>,
    pub thinning: Option<usize>,
    pub min_samples: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            horizon: 20_000.0,
            burn_in: None,
            thinning: None,
            min_samples: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InvariantSample {
    pub x: f64,
    pub samples: Vec<f64>,
    pub burn_in: f64,
    pub thinning: usize,
}

/// Brownian and compound-Poisson increments generated on the fly, so long
/// ergodic runs need no stored noise.
struct FastNoise {
    w: StreamRng,
    times: StreamRng,
    marks: StreamRng,
    sd: f64,
    intensity: f64,
    law: MarkLaw,
    dt: f64,
    t: f64,
    next_event: f64,
}

impl FastNoise {
    fn new(model: &ModelSpec, dt: f64, seed: &SeedSpec) -> Self {
        let nu = model.nu2();
        let intensity = if model.has_fast_jumps() { nu.rate } else { 0.0 };
        let mut s = Self {
            w: seed.child(0).rng(),
            times: seed.child(1).rng(),
            marks: seed.child(2).rng(),
            sd: dt.sqrt(),
            intensity,
            law: nu.law,
            dt,
            t: 0.0,
            next_event: f64::INFINITY,
        };
        if intensity > 0.0 {
            s.next_event = std_exp(&mut s.times) / intensity;
        }
        s
    }

    fn step(&mut self, jumps: &mut Vec<JumpEvent>) -> f64 {
        jumps.clear();
        let end = self.t + self.dt;
        while self.next_event <= end {
            jumps.push(JumpEvent {
                time: self.next_event,
                mark: self.law.sample(&mut self.marks),
            });
            self.next_event += std_exp(&mut self.times) / self.intensity;
        }
        self.t = end;
        self.sd * std_normal(&mut self.w)
    }
}

/// Post-burn-in, thinned samples of the frozen fast process at `x`.
pub fn estimate_invariant(
    model: &ModelSpec,
    x: f64,
    z0: f64,
    cfg: &EstimatorConfig,
    seed: &SeedSpec,
) -> Result<InvariantSample> {
    let m = model.dissipativity()?;
    if !m.valid {
        return config_err(format!(
            "fast process is not dissipative (M = {}); no invariant law to sample",
            m.m
        ));
    }
    if !(cfg.dt > 0.0 && cfg.dt <= 0.1) {
        return config_err(format!("estimator dt must lie in (0, 0.1], got {}", cfg.dt));
    }
    let burn_in = cfg.burn_in.unwrap_or(10.0 / m.m);
    let thinning = cfg
        .thinning
        .unwrap_or_else(|| (1.0 / (m.m * cfg.dt)).round().max(1.0) as usize);
    if thinning == 0 || burn_in < 0.0 {
        return config_err("thinning must be >= 1 and burn-in >= 0");
    }
    let burn_steps = (burn_in / cfg.dt).ceil() as usize;
    let total = (cfg.horizon / cfg.dt).round() as usize;
    let count = total / thinning;
    if count < cfg.min_samples {
        return config_err(format!(
            "horizon {} yields {count} samples, below the minimum {}",
            cfg.horizon, cfg.min_samples
        ));
    }
    let mut noise = FastNoise::new(model, cfg.dt, seed);
    let mut jumps = Vec::new();
    let mut z = z0;
    let mut step = 0usize;
    let mut advance = |z: &mut f64| -> Result<()> {
        let dw = noise.step(&mut jumps);
        *z = fast_step(model, 1.0, x, *z, cfg.dt, dw, &jumps);
        step += 1;
        if z.is_finite() {
            Ok(())
        } else {
            Err(Error::Divergence { step })
        }
    };
    for _ in 0..burn_steps {
        advance(&mut z)?;
    }
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        for _ in 0..thinning {
            advance(&mut z)?;
        }
        samples.push(z);
    }
    Ok(InvariantSample {
        x,
        samples,
        burn_in,
        thinning,
    })
}

/// Monte Carlo average of b1(x, Z) over the invariant samples.
pub fn averaged_drift(
    model: &ModelSpec,
    x: f64,
    cfg: &EstimatorConfig,
    seed: &SeedSpec,
) -> Result<Estimate> {
    let s = estimate_invariant(model, x, model.params.z0, cfg, seed)?;
    let vals: Vec<f64> = s.samples.iter().map(|&z| model.b1(x, z)).collect();
    Ok(Estimate::from_correlated(&vals))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Interpolation {
    Nearest,
    Multilinear,
}

/// Averaged drift tabulated on a rectangular node grid.
#[derive(Debug)]
pub struct DriftCache {
    /// Node coordinates per dimension, strictly increasing.
    pub nodes: Vec<Vec<f64>>,
    /// Row-major over nodes (last dimension fastest); `dim` values per node.
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    pub interpolation: Interpolation,
    pub warnings: Vec<String>,
    extrapolated: AtomicUsize,
}

impl Clone for DriftCache {
    fn clone(&self) -> Self {
        Self {
            nodes: self.nodes.clone(),
            values: self.values.clone(),
            se: self.se.clone(),
            interpolation: self.interpolation,
            warnings: self.warnings.clone(),
            extrapolated: AtomicUsize::new(self.extrapolated.load(Ordering::Relaxed)),
        }
    }
}

impl PartialEq for DriftCache {
    fn eq(&self, other: &Self) -> bool {
        self.nodes == other.nodes
            && self.values == other.values
            && self.se == other.se
            && self.interpolation == other.interpolation
    }
}

impl DriftCache {
    pub fn new(
        nodes: Vec<Vec<f64>>,
        values: Vec<f64>,
        se: Vec<f64>,
        interpolation: Interpolation,
    ) -> Result<Self> {
        if nodes.is_empty() || nodes.iter().any(|n| n.is_empty()) {
            return config_err("drift cache needs at least one node per dimension");
        }
        for n in &nodes {
            if n.windows(2).any(|w| !(w[0] < w[1])) {
                return config_err("drift cache nodes must be strictly increasing");
            }
        }
        let count: usize = nodes.iter().map(Vec::len).product();
        let dim = nodes.len();
        if values.len() != count * dim || se.len() != count * dim {
            return config_err(format!(
                "drift cache expects {} values and SEs, got {} and {}",
                count * dim,
                values.len(),
                se.len()
            ));
        }
        Ok(Self {
            nodes,
            values,
            se,
            interpolation,
            warnings: Vec::new(),
            extrapolated: AtomicUsize::new(0),
        })
    }

    pub fn dim(&self) -> usize {
        self.nodes.len()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.iter().map(Vec::len).product()
    }

    /// Multi-index to flat node index.
    fn flat(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.nodes)
            .fold(0, |acc, (&i, n)| acc * n.len() + i)
    }

    /// Coordinates of the node with flat index `k`.
    pub fn node_point(&self, mut k: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        for d in (0..self.dim()).rev() {
            let len = self.nodes[d].len();
            p[d] = self.nodes[d][k % len];
            k /= len;
        }
        p
    }

    pub fn node_value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim()..(k + 1) * self.dim()]
    }

    pub fn node_se(&self, k: usize) -> &[f64] {
        &self.se[k * self.dim()..(k + 1) * self.dim()]
    }

    /// Number of evaluations that fell outside the node hull.
    pub fn extrapolations(&self) -> usize {
        self.extrapolated.load(Ordering::Relaxed)
    }

    /// Interpolated value at `x`, and whether `x` lay outside the hull (in
    /// which case the nearest node's value is returned).
    pub fn evaluate(&self, x: &[f64]) -> Result<(Vec<f64>, bool)> {
        let dim = self.dim();
        if x.len() != dim {
            return config_err(format!("drift cache is {dim}-dimensional, got a {}-vector", x.len()));
        }
        let outside = x
            .iter()
            .zip(&self.nodes)
            .any(|(&xi, n)| !(xi >= n[0] && xi <= n[n.len() - 1]));
        if outside || self.interpolation == Interpolation::Nearest {
            if outside {
                self.extrapolated.fetch_add(1, Ordering::Relaxed);
            }
            let idx: Vec<usize> = x
                .iter()
                .zip(&self.nodes)
                .map(|(&xi, n)| nearest(n, xi))
                .collect();
            return Ok((self.node_value(self.flat(&idx)).to_vec(), outside));
        }
        // Multilinear: sum over the 2^dim corners of the enclosing cell.
        let mut base = Vec::with_capacity(dim);
        let mut frac = Vec::with_capacity(dim);
        for (&xi, n) in x.iter().zip(&self.nodes) {
            if n.len() == 1 {
                base.push(0);
                frac.push(0.0);
                continue;
            }
            let i = (n.partition_point(|&v| v <= xi).max(1) - 1).min(n.len() - 2);
            base.push(i);
            frac.push((xi - n[i]) / (n[i + 1] - n[i]));
        }
        let mut out = vec![0.0; dim];
        let mut idx = vec![0usize; dim];
        for corner in 0..(1usize << dim) {
            let mut w = 1.0;
            for d in 0..dim {
                let hi = (corner >> d) & 1 == 1;
                if hi && self.nodes[d].len() == 1 {
                    w = 0.0;
                    break;
                }
                idx[d] = base[d] + hi as usize;
                w *= if hi { frac[d] } else { 1.0 - frac[d] };
            }
            if w == 0.0 {
                continue;
            }
            let v = self.node_value(self.flat(&idx));
            for (o, vi) in out.iter_mut().zip(v) {
                *o += w * vi;
            }
        }
        Ok((out, false))
    }

    /// Flags adjacent-node slopes steeper than `bound`.
    pub fn lipschitz_check(&mut self, bound: f64) {
        let dim = self.dim();
        let mut found = Vec::new();
        for k in 0..self.node_count() {
            let p = self.node_point(k);
            let mut idx: Vec<usize> = p
                .iter()
                .zip(&self.nodes)
                .map(|(&v, n)| n.iter().position(|&w| w == v).unwrap())
                .collect();
            for d in 0..dim {
                if idx[d] + 1 >= self.nodes[d].len() {
                    continue;
                }
                let a = self.node_value(k).to_vec();
                idx[d] += 1;
                let k2 = self.flat(&idx);
                idx[d] -= 1;
                let b = self.node_value(k2);
                let h = self.nodes[d][idx[d] + 1] - self.nodes[d][idx[d]];
                let slope = a
                    .iter()
                    .zip(b)
                    .map(|(x, y)| (x - y).abs() / h)
                    .fold(0.0, f64::max);
                if slope > bound {
                    found.push(format!(
                        "adjacent-node slope {slope:.4} exceeds {bound} near {:?} (dimension {d})",
                        p
                    ));
                }
            }
        }
        for w in &found {
            warn!("{w}");
        }
        self.warnings.extend(found);
    }

    /// CSV sidecar with columns x0.., b0.., se0.. (17 significant digits).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to(&self, out: impl Write) -> Result<()> {
        let dim = self.dim();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = (0..dim).map(|d| format!("x{d}")).collect();
        header.extend((0..dim).map(|d| format!("b{d}")));
        header.extend((0..dim).map(|d| format!("se{d}")));
        header.push("interpolation".into());
        w.write_record(&header)?;
        let interp = match self.interpolation {
            Interpolation::Nearest => "nearest",
            Interpolation::Multilinear => "multilinear",
        };
        for k in 0..self.node_count() {
            let mut row: Vec<String> = self.node_point(k).iter().map(|v| fmt17(*v)).collect();
            row.extend(self.node_value(k).iter().map(|v| fmt17(*v)));
            row.extend(self.node_se(k).iter().map(|v| fmt17(*v)));
            row.push(interp.into());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        Self::read_csv_from(std::fs::File::open(path)?)
    }

    pub fn read_csv_from(input: impl Read) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let header = r.headers()?.clone();
        if header.len() < 4 || (header.len() - 1) % 3 != 0 {
            return config_err("drift cache CSV has an unexpected header");
        }
        let dim = (header.len() - 1) / 3;
        let mut coords: Vec<Vec<f64>> = vec![Vec::new(); dim];
        let mut values = Vec::new();
        let mut se = Vec::new();
        let mut interpolation = Interpolation::Multilinear;
        for rec in r.records() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i]
                    .parse()
                    .map_err(|_| Error::Config(format!("bad number `{}` in drift cache", &rec[i])))
            };
            for (d, c) in coords.iter_mut().enumerate() {
                let v = num(d)?;
                if !c.contains(&v) {
                    c.push(v);
                }
            }
            for d in 0..dim {
                values.push(num(dim + d)?);
                se.push(num(2 * dim + d)?);
            }
            interpolation = match &rec[3 * dim] {
                "nearest" => Interpolation::Nearest,
                "multilinear" => Interpolation::Multilinear,
                other => return config_err(format!("unknown interpolation `{other}`")),
            };
        }
        for c in &mut coords {
            c.sort_by(f64::total_cmp);
        }
        Self::new(coords, values, se, interpolation)
    }
}

impl DriftEvaluator for DriftCache {
    fn bbar(&self, x: f64) -> f64 {
        self.evaluate(&[x]).expect("scalar drift cache").0[0]
    }
}

fn nearest(nodes: &[f64], x: f64) -> usize {
    let i = nodes.partition_point(|&v| v < x);
    if i == 0 {
        0
    } else if i >= nodes.len() {
        nodes.len() - 1
    } else if (x - nodes[i - 1]) <= (nodes[i] - x) {
        i - 1
    } else {
        i
    }
}

pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// `count` evenly spaced nodes on [lo, hi].
pub fn uniform_nodes(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(hi > lo) {
        return config_err("node grid needs count >= 2 and hi > lo");
    }
    let h = (hi - lo) / (count - 1) as f64;
    Ok((0..count)
        .map(|i| if i == count - 1 { hi } else { lo + i as f64 * h })
        .collect())
}

/// Estimates the averaged drift at every node of a 1-D grid (nodes run in
/// parallel, node i on stream `seed / i`).
pub fn build_drift_cache(
    model: &ModelSpec,
    nodes: Vec<f64>,
    cfg: &EstimatorConfig,
    seed: &SeedSpec,
    lipschitz_bound: Option<f64>,
) -> Result<DriftCache> {
    let est: Vec<Estimate> = nodes
        .par_iter()
        .enumerate()
        .map(|(i, &x)| averaged_drift(model, x, cfg, &seed.child(i as u64)))
        .collect::<Result<_>>()?;
    let values = est.iter().map(|e| e.mean).collect();
    let se = est.iter().map(|e| e.se).collect();
    let mut cache = DriftCache::new(vec![nodes], values, se, Interpolation::Multilinear)?;
    if let Some(b) = lipschitz_bound {
        cache.lipschitz_check(b);
    }
    Ok(cache)
}
