//! Seeded shuffling used by the data splitter.
//!
//! The generator is SplitMix64 and the bounded draw is the multiply-shift
//! reduction `(next_u64 * n) >> 64`. Both are fixed here so that a split can
//! be reproduced bit-for-bit by any other implementation given the seed.

use rand::RngCore;
use rand::SeedableRng;
use rand_xoshiro::SplitMix64;

pub(crate) struct SplitShuffler {
    rng: SplitMix64,
}

impl SplitShuffler {
    pub(crate) fn new(seed: u64) -> Self {
        Self {
            rng: SplitMix64::seed_from_u64(seed),
        }
    }

    /// Uniform draw from `0..n`; `n` must be nonzero.
    pub(crate) fn below(&mut self, n: usize) -> usize {
        ((self.rng.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher–Yates, walking from the back.
    pub(crate) fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}
