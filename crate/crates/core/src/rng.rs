//! Counter-based, splittable random streams.
//!
//! Every random quantity in the crate is drawn from a stream addressed by a
//! [`SeedSpec`]: a master seed plus a path of integers (replication index,
//! process index, particle index, ...). The path is hashed into the 256-bit
//! key of a ChaCha8 block cipher, whose 64-bit block counter then drives the
//! stream. Two specs with the same master seed and path give bit-identical
//! output; distinct paths give unrelated keys. Nothing depends on the order in
//! which streams are created, so parallel and serial schedules agree.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Random stream type used throughout the crate.
pub type StreamRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Address of one random stream.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub master: u64,
    pub path: Vec<u64>,
}

impl SeedSpec {
    pub fn new(master: u64) -> Self {
        Self {
            master,
            path: Vec::new(),
        }
    }

    pub fn with_path(master: u64, path: &[u64]) -> Self {
        Self {
            master,
            path: path.to_vec(),
        }
    }

    /// Extends the path by one component.
    pub fn child(&self, index: u64) -> Self {
        let mut path = self.path.clone();
        path.push(index);
        Self {
            master: self.master,
            path,
        }
    }

    /// 256-bit cipher key for this address.
    pub fn key(&self) -> [u8; 32] {
        let mut h = splitmix64(self.master ^ 0x5EED_5EED_5EED_5EED);
        for (depth, &p) in self.path.iter().enumerate() {
            let salt = splitmix64((depth as u64 + 1).wrapping_mul(GOLDEN));
            h = splitmix64(h ^ splitmix64(p ^ salt));
        }
        h = splitmix64(h ^ self.path.len() as u64);
        let mut key = [0u8; 32];
        for (j, chunk) in key.chunks_exact_mut(8).enumerate() {
            let word = splitmix64(h.wrapping_add((j as u64 + 1).wrapping_mul(GOLDEN)));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        key
    }

    pub fn rng(&self) -> StreamRng {
        ChaCha8Rng::from_seed(self.key())
    }
}

#[inline]
pub fn std_normal(rng: &mut StreamRng) -> f64 {
    StandardNormal.sample(rng)
}

#[inline]
pub fn std_exp(rng: &mut StreamRng) -> f64 {
    Exp1.sample(rng)
}

/// Uniform on the open interval (0, 1).
#[inline]
pub fn open_unit(rng: &mut StreamRng) -> f64 {
    use rand::Rng;
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}
