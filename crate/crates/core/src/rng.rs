//! Seeded random streams.
//!
//! Every stochastic step draws from ChaCha8 (`rand_chacha::ChaCha8Rng`), whose
//! output is fully specified by the algorithm, the 64-bit seed and the stream
//! id. Runs therefore reproduce bit-for-bit across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type AtlasRng = ChaCha8Rng;

/// Generator for the main stream of `seed`.
pub fn seeded(seed: u64) -> AtlasRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for sub-task `stream` (e.g. one per chart) of `seed`.
pub fn stream(seed: u64, stream: u64) -> AtlasRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_add(1));
    rng
}

/// Mixes `seed` with labels such as a chart index and an attempt number
/// (SplitMix64 finalizer) to obtain a fresh, well-spread seed.
pub fn derive_seed(seed: u64, labels: &[u64]) -> u64 {
    labels.iter().fold(seed, |acc, &label| {
        let mut z = acc
            ^ label
                .wrapping_add(0x9E37_79B9_7F4A_7C15)
                .wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}
