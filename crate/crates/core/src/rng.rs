//! Seeded random streams.
//!
//! Every stochastic draw in the crate goes through an [`RngStream`]. A stream is
//! identified by the master seed, a purpose label and a list of integer
//! indices (generation, individual, episode, repeat, ...). The generator is
//! ChaCha8 (`rand_chacha`): the 256-bit key is expanded from the master seed
//! with SplitMix64 and the 64-bit ChaCha stream id is a SplitMix64 hash of the
//! FNV-1a digest of the label chained with the indices. Two streams with
//! different labels or indices share nothing but the key, so they are
//! independent and reproducible on every platform.
//!
//! Gaussian samples use `rand_distr::StandardNormal` (ziggurat method). The
//! ziggurat tables are part of the reproducibility contract: changing the
//! `rand_distr` major version changes every noisy trajectory.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Purpose labels used across the crate.
pub mod purpose {
    pub const SENSOR_NOISE: &str = "sensor-noise";
    pub const GA_INIT: &str = "ga-init";
    pub const GA_BREED: &str = "ga-breed";
    pub const FITNESS: &str = "fitness";
    pub const EPISODE_IC: &str = "episode-ic";
    pub const SCENARIO_IC: &str = "scenario-ic";
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8], mut hash: u64) -> u64 {
    for b in bytes {
        hash ^= u64::from(*b);
        hash = hash.wrapping_mul(FNV_PRIME);
    }
    hash
}

/// Derives a 64-bit seed from a master seed, label and indices. Used where a
/// plain seed has to be handed to another component (e.g. per-individual
/// fitness seeds).
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    let mut h = fnv1a(label.as_bytes(), FNV_OFFSET);
    h = fnv1a(&master.to_le_bytes(), h);
    for i in indices {
        h = fnv1a(&i.to_le_bytes(), h);
    }
    let mut s = h;
    splitmix64(&mut s)
}

/// A reproducible random stream for one purpose.
#[derive(Debug, Clone)]
pub struct RngStream {
    master: u64,
    label: String,
    indices: Vec<u64>,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(master: u64, label: &str, indices: &[u64]) -> Self {
        let mut key = [0u8; 32];
        let mut s = master;
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        let mut h = fnv1a(label.as_bytes(), FNV_OFFSET);
        for i in indices {
            h = fnv1a(&i.to_le_bytes(), h);
        }
        let mut hs = h;
        rng.set_stream(splitmix64(&mut hs));
        Self {
            master,
            label: label.to_string(),
            indices: indices.to_vec(),
            rng,
        }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// Derivation path, e.g. `fitness/3/17`.
    pub fn path(&self) -> String {
        let mut p = self.label.clone();
        for i in &self.indices {
            p.push('/');
            p.push_str(&i.to_string());
        }
        p
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            return lo;
        }
        self.rng.gen_range(lo..=hi)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    pub fn gaussian(&mut self, mean: f64, std: f64) -> f64 {
        let z: f64 = self.rng.sample(StandardNormal);
        mean + std * z
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.unit() < p
    }
}
