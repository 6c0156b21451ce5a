//! Seed-deterministic noise for synthetic datasets.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// A reproducible Gaussian noise source.
pub struct Noise {
    rng: ChaCha8Rng,
}

impl Noise {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// One standard-normal draw.
    pub fn standard(&mut self) -> f64 {
        Normal::new(0.0, 1.0).expect("unit normal").sample(&mut self.rng)
    }

    /// `v + sigma * N(0, 1)`.
    pub fn additive(&mut self, v: f64, sigma: f64) -> f64 {
        v + sigma * self.standard()
    }

    /// `v * (1 + rel * N(0, 1))`.
    pub fn multiplicative(&mut self, v: f64, rel: f64) -> f64 {
        v * (1.0 + rel * self.standard())
    }
}
