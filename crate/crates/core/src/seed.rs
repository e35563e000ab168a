//! Deterministic seed derivation.
//!
//! Every random stream in the simulator is a ChaCha8 generator seeded from a
//! 64-bit value obtained by folding a root seed with a list of stream labels
//! (layer index, client id, round, ...) through a splitmix64 finalizer. Streams
//! therefore never depend on the order in which other streams are consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream labels, kept distinct so unrelated streams never collide.
pub mod tag {
    pub const WEIGHTS: u64 = 0x5745_4947;
    pub const SCORES: u64 = 0x5343_4f52;
    pub const SAMPLING: u64 = 0x5341_4d50;
    pub const SHUFFLE: u64 = 0x5348_5546;
    pub const DATA: u64 = 0x4441_5441;
    pub const CLUSTER: u64 = 0x434c_5553;
    pub const GROUP_INIT: u64 = 0x4752_5550;
    pub const SPLIT: u64 = 0x5350_4c54;
}

/// splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `root`.
pub fn derive(root: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(root), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn rng(root: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, parts))
}
