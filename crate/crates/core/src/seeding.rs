//! Deterministic sub-generator derivation.
//!
//! Every random decision in the pipeline draws from a ChaCha stream keyed by
//! the run seed plus a short path of integers (a domain tag, an epoch, a
//! student id, ...). Results therefore do not depend on iteration or thread
//! scheduling order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Domain tags keep the streams of different subsystems apart.
pub mod domain {
    pub const SPLIT: u64 = 1;
    pub const SUBSAMPLE: u64 = 2;
    pub const SYNTHETIC: u64 = 3;
    pub const KMEANS: u64 = 4;
    pub const SAMPLER: u64 = 5;
    pub const INIT: u64 = 6;
    pub const SHUFFLE: u64 = 7;
    pub const GRADCHECK: u64 = 8;
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Builds a generator for `seed` refined by `path`.
pub fn stream(seed: u64, path: &[u64]) -> Rng {
    let mut key = [0u8; 32];
    let mut state = splitmix64(seed);
    for &p in path {
        state = splitmix64(state ^ splitmix64(p.wrapping_add(0xA076_1D64_78BD_642F)));
    }
    for chunk in key.chunks_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
