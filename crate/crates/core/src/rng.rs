//! Reproducible random number streams.
//!
//! Shot sampling is embarrassingly parallel, so every batch of shots draws
//! from a counter-based stream addressed by `(seed, stream)`. Re-running with
//! the same addresses reproduces the same draws regardless of batch order or
//! thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for stream `stream` of the experiment seeded with
/// `seed`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derive a sub-seed for a named stage so that independent stages of one run
/// never share a stream address space.
pub fn stage_seed(seed: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, folded into the base seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in stage.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    seed ^ h
}
