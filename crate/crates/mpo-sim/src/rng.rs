//! Per-trajectory random streams derived from a single master seed.
//!
//! Each trajectory gets an independent ChaCha8 stream keyed by
//! (master seed, trajectory index) through a SplitMix64 avalanche, so
//! ensembles are reproducible regardless of scheduling order and a single
//! trajectory can be replayed in isolation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// The 32-byte ChaCha key for trajectory `index` under `master_seed`.
pub fn trajectory_key(master_seed: u64, index: u64) -> [u8; 32] {
    let mut key = [0u8; 32];
    let mut state = splitmix64(master_seed) ^ splitmix64(index.wrapping_mul(0xa076_1d64_78bd_642f));
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    key
}

/// Independent RNG for one trajectory.
pub fn trajectory_rng(master_seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(trajectory_key(master_seed, index))
}
