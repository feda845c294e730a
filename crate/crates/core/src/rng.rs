//! Seeded randomness. Every stochastic choice in the crate (weight init,
//! shuffling, synthetic data) draws from a SplitMix64 stream so runs are
//! reproducible from a single `u64` seed.

use rand::{Rng, SeedableRng};
pub use rand_xoshiro::SplitMix64;

pub fn seeded(seed: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed)
}

/// Derives an independent stream for a named purpose from a base seed.
pub fn derived(seed: u64, stream: u64) -> SplitMix64 {
    let mut base = seeded(seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    SplitMix64::seed_from_u64(base.random::<u64>())
}
