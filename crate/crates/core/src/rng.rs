//! Deterministic random streams.
//!
//! Every stream is a ChaCha8 generator keyed from a 64-bit seed. Gaussian draws
//! use `rand_distr::StandardNormal` (ziggurat), which is platform independent.
//! Child streams for parallel work are keyed with [`derive_seed`], so results
//! never depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// `child_seed = hash(parent_seed, index)`.
pub fn derive_seed(parent: u64, index: u64) -> u64 {
    mix64(mix64(parent ^ 0x9e37_79b9_7f4a_7c15).wrapping_add(mix64(index.wrapping_add(1))))
}

#[derive(Debug, Clone)]
pub struct RandomStream {
    seed: u64,
    rng: ChaCha8Rng,
}

impl RandomStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream for worker `index`; does not advance `self`.
    pub fn child(&self, index: u64) -> RandomStream {
        RandomStream::new(derive_seed(self.seed, index))
    }

    pub fn gaussian(&mut self) -> f64 {
        self.rng.sample(StandardNormal)
    }

    pub fn draw_gaussian(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.gaussian()).collect()
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform integer in [0, n). Panics if n == 0.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    /// First `k` entries of a seeded Fisher-Yates shuffle of 0..n.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        let k = k.min(n);
        let mut idx: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            idx.swap(i, j);
        }
        idx.truncate(k);
        idx
    }
}
