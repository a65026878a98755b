//! Counter-based seed derivation for ensemble members.
//!
//! Every member of an ensemble owns an independent random stream derived
//! from `(ensemble seed, member index)` alone, so results do not depend on
//! the order or the thread in which members are evaluated.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 output function. A bijection on `u64`.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of member `index` of an ensemble seeded with `seed`.
///
/// For a fixed `seed` the map `index -> seed` is injective: the counter
/// `seed + (index + 1) * GOLDEN_GAMMA` is injective modulo 2^64 because the
/// increment is odd, and [`mix64`] is a bijection.
pub fn derive_member_seed(seed: u64, index: u64) -> u64 {
    mix64(seed.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA)))
}

/// Random stream of ensemble member `index`.
pub fn member_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_member_seed(seed, index))
}
