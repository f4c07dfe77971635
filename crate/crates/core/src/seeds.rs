//! Deterministic seed-stream splitting.
//!
//! Every stochastic component (split shuffles, batch shuffles, weight
//! init, dropout masks, synthetic noise) draws from its own ChaCha8 stream,
//! derived from the run seed and a fixed purpose tag. Streams are
//! independent of each other and stable across runs and platforms.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags for seed-stream derivation.
pub mod tag {
    pub const SPLIT: u64 = 0x5350_4c49;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const INIT: u64 = 0x494e_4954;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const SYNTH: u64 = 0x5359_4e54;
}

/// Mix a base seed with a purpose tag (splitmix64 finalizer).
pub fn derive(base: u64, tag: u64) -> u64 {
    let mut z = base ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// ChaCha8 stream for (base seed, purpose tag).
pub fn rng(base: u64, tag: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(base, tag))
}

/// Sub-stream indexed within a purpose (e.g. per dropout layer).
pub fn rng_indexed(base: u64, tag: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(derive(base, tag), index))
}
