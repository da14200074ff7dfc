//! Seeded random streams.
//!
//! Every stochastic component draws from its own ChaCha stream, derived from
//! the master seed and a stream identifier. Streams never share state, so
//! results do not depend on the order in which components are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

/// Stream families. The family occupies the high bits of the ChaCha stream
/// id, the member index (user id, repeat, ...) the low bits.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Data = 1,
    Split = 2,
    LoggingPolicy = 3,
    UserSetup = 4,
    UserClicks = 5,
    RoundSampling = 6,
    Baseline = 7,
    Tuning = 8,
}

/// Independent stream `(family, index)` under `seed`.
pub fn stream(seed: u64, family: Stream, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((family as u64) << 48) ^ index);
    rng
}

/// Derive a child seed, e.g. per sweep point and repeat. SplitMix64 finalizer.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed
        .wrapping_add(a.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(b.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
