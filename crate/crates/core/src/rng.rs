//! Seed hierarchy: run seed → per-instance seed → per-iteration seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Counter-based generator used everywhere randomness is needed.
pub type SeedRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for `tag` under `parent`.
pub fn derive_seed(parent: u64, tag: u64) -> u64 {
    splitmix64(parent ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

pub fn derive_path(parent: u64, path: &[u64]) -> u64 {
    path.iter().fold(parent, |s, &t| derive_seed(s, t))
}

pub fn rng_from(seed: u64) -> SeedRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn rng_at(parent: u64, path: &[u64]) -> SeedRng {
    rng_from(derive_path(parent, path))
}
