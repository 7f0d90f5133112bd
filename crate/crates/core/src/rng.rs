//! Seed fan-out.
//!
//! Every random draw in a run derives from one user seed. Independent
//! consumers get their own ChaCha stream, selected by a fixed counter, so
//! adding a consumer never perturbs the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream identifiers used by the library.
pub mod streams {
    pub const NOISE: u64 = 1;
    pub const FOREGROUND_EXPERT: u64 = 2;
    pub const BACKGROUND_EXPERT: u64 = 3;
    pub const INIT_EXPERT: u64 = 4;
    pub const PHANTOM: u64 = 5;
}

/// Generator for stream `stream` of `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a child seed, e.g. one per (image, noise, lambda) cell of a sweep.
pub fn split_seed(seed: u64, counter: u64) -> u64 {
    // splitmix64 finalizer over seed + counter
    let mut z = seed.wrapping_add(counter.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
