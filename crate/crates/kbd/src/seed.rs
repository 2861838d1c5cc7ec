//! Deterministic RNG stream derivation. Every random draw in the crate goes
//! through a ChaCha stream keyed by the run seed plus a few stream tags, so
//! reruns with the same config are bit-identical.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Splitmix64 mixing step.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for an independent labeled stream, e.g. `stream_rng(seed, &[campaign, day])`.
pub fn stream_rng(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut state = mix(seed);
    for t in tags {
        state = mix(state ^ *t);
    }
    ChaCha8Rng::seed_from_u64(state)
}

#[cfg(test)]
pub struct TestRng(ChaCha8Rng);

#[cfg(test)]
impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(stream_rng(seed, &[]))
    }

    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.0.gen_range(-1.0..1.0)
    }

    pub fn uniform_vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.uniform()).collect()
    }
}
