//! Seeded random streams.
//!
//! Every random draw in the crate comes from ChaCha8 keyed by a `u64` seed
//! plus a stream number, so a given (seed, stream) pair yields the same
//! sequence on every platform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Identifies the generator family recorded in reports.
pub const GENERATOR_NAME: &str = "chacha8-rand_chacha-0.3";

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// SplitMix64 finalizer; combines a seed with an index into a new seed.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
