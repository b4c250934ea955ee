//! Seeded generators.
//!
//! Every stochastic stage draws from a ChaCha8 stream whose seed is derived
//! from the run seed and a stream counter with [`derive_seed`], so results
//! never depend on evaluation order or thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of stream `stream` under base seed `base`: `mix64(base + (stream + 1) * GOLDEN)`.
#[inline]
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    mix64(base.wrapping_add(stream.wrapping_add(1).wrapping_mul(GOLDEN)))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

pub fn stream_rng(base: u64, stream: u64) -> SimRng {
    rng_from_seed(derive_seed(base, stream))
}
