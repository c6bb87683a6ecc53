//! Reproducible IID uniform perturbations with splittable substreams.
//!
//! A stream is keyed by `(seed, path)`: the path is folded into a 256-bit
//! ChaCha8 key with SplitMix64 finalizers, so every child stream is a
//! function of its path alone. ChaCha is counter-based, which makes the
//! output independent of thread scheduling and platform.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = mix64(seed.wrapping_add(GOLDEN));
    for (depth, &p) in path.iter().enumerate() {
        h = mix64(h ^ mix64(p.wrapping_add(GOLDEN.wrapping_mul(depth as u64 + 2))));
    }
    let mut key = [0u8; 32];
    for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
        let w = mix64(h.wrapping_add(GOLDEN.wrapping_mul(i as u64 + 1)));
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    key
}

/// Identity of a stream, recorded in manifests.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StreamId {
    pub seed: u64,
    pub path: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct NoiseStream {
    seed: u64,
    path: Vec<u64>,
    rng: ChaCha8Rng,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        Self::with_path(seed, Vec::new())
    }

    pub fn with_path(seed: u64, path: Vec<u64>) -> Self {
        let rng = ChaCha8Rng::from_seed(derive_key(seed, &path));
        NoiseStream { seed, path, rng }
    }

    /// Child stream; independent of how much of `self` has been consumed.
    pub fn substream(&self, index: u64) -> NoiseStream {
        let mut path = self.path.clone();
        path.push(index);
        Self::with_path(self.seed, path)
    }

    pub fn id(&self) -> StreamId {
        StreamId { seed: self.seed, path: self.path.clone() }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path
    }

    /// Number of 64-bit words consumed so far.
    pub fn counter(&self) -> u64 {
        (self.rng.get_word_pos() / 2) as u64
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Dyadic rational in `[0, 1)` from 53 random bits.
    #[inline]
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform on `[−ε, ε)`; exactly `0.0` when `ε = 0`. Always consumes one word.
    #[inline]
    pub fn draw(&mut self, epsilon: f64) -> f64 {
        let u = self.unit();
        if epsilon == 0.0 {
            0.0
        } else {
            epsilon * (2.0 * u - 1.0)
        }
    }

    /// Uniform on `[lo, hi)`.
    #[inline]
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.unit()
    }
}

pub fn substream(parent: &NoiseStream, index: u64) -> NoiseStream {
    parent.substream(index)
}

pub fn draw(stream: &mut NoiseStream, epsilon: f64) -> f64 {
    stream.draw(epsilon)
}
