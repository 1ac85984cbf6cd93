//! Seeded, stream-split random number generation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator used throughout the crate.
pub type NarRng = ChaCha8Rng;

/// Generator for `(seed, stream)`. Distinct streams are independent, so
/// replicates can be drawn in any order or in parallel.
pub fn rng_for(seed: u64, stream: u64) -> NarRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stream id for replicate `rep` of design point `point`.
pub fn replicate_stream(point: usize, rep: usize) -> u64 {
    ((point as u64) << 32) | rep as u64
}
