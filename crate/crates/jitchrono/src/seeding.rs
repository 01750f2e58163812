//! Deterministic seed derivation.
//!
//! Every random decision in the pipeline draws from an RNG seeded by
//! mixing a master seed with a fixed stream label and position indexes.
//! Results are therefore independent of thread count and scheduling.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// splitmix64 finalizer; good avalanche for cheap stream splitting.
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a master seed with an arbitrary list of stream coordinates.
pub fn derive(master: u64, parts: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for &p in parts {
        state = splitmix64(state ^ splitmix64(p).wrapping_add(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// RNG for a derived stream.
pub fn rng(master: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(master, parts))
}
