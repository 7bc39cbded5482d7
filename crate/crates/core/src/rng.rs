//! Seeded random streams.
//!
//! Every stochastic routine draws from ChaCha8 (`rand_chacha::ChaCha8Rng`), a
//! counter-based generator whose output is fixed across platforms. Independent
//! substreams are obtained by keeping the 64-bit seed and selecting a distinct
//! ChaCha stream id, so work can be split across threads without changing any
//! drawn value.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream ids below this value are reserved for per-sample streams of the
/// dataset sampler; the named streams below sit above it.
const NAMED_STREAM_BASE: u64 = 1 << 62;

pub(crate) const STREAM_FEATURE: u64 = NAMED_STREAM_BASE;
pub(crate) const STREAM_MESSAGES: u64 = NAMED_STREAM_BASE + 1;
pub(crate) const STREAM_SCHEDULE: u64 = NAMED_STREAM_BASE + 2;

/// A generator for `(seed, stream)`.
pub fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a base seed with an index (SplitMix64 finalizer) to give
/// well-separated seeds for ensemble members.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
