//! Seeded randomness.
//!
//! Every random stream in the crate is a SplitMix64 generator (Steele, Lea &
//! Flood 2014): the state advances by the golden-gamma constant
//! `0x9E3779B97F4A7C15` and each output is the state passed through the
//! `mix64` finalizer (xor-shift 30/27/31 with multipliers `0xBF58476D1CE4E5B9`
//! and `0x94D049BB133111EB`). Child streams are split off a root seed with
//! [`derive_seed`], so a single experiment seed determines initialisation,
//! shuffling, data synthesis and k-means seeding independently.

use rand::SeedableRng;
pub use rand_xoshiro::SplitMix64;

/// The generator used throughout the crate.
pub type Rng = SplitMix64;

pub fn rng(seed: u64) -> Rng {
    SplitMix64::seed_from_u64(seed)
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic child seed for a named stream.
///
/// The label is folded with FNV-1a so the mapping does not depend on the
/// standard library's hasher.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(mix64(h)))
}
