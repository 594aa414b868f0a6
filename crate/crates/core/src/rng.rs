//! Seeded random streams.
//!
//! Every stochastic choice in the crate draws from a [`SinrRng`] created
//! from a 64-bit seed, and sub-streams are derived with [`derive_seed`], so a
//! single master seed fixes an entire run.

use rand::SeedableRng;

pub type SinrRng = rand_chacha::ChaCha8Rng;

/// SplitMix64 finaliser.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the sub-stream `(tag, index)` of `seed`.
pub fn derive_seed(seed: u64, tag: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(tag)) ^ index)
}

pub fn rng_from_seed(seed: u64) -> SinrRng {
    SinrRng::seed_from_u64(seed)
}

/// 64-bit FNV-1a, used where a seed must follow a string key (species ids)
/// rather than a position.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
