//! Deterministic derivation of independent RNG streams from one master seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Derives a child seed from a master seed, a purpose tag, and an index.
///
/// Every randomized stage of the pipeline draws from its own stream obtained
/// through this function, so stages can be reordered, skipped, or
/// parallelized without perturbing each other's randomness. The tag is
/// hashed with FNV-1a and the result is mixed with a SplitMix64 finalizer;
/// distinct `(seed, tag, index)` triples map to well-separated seeds.
pub fn derive_seed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in tag.bytes() {
        h ^= u64::from(byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(seed ^ h ^ index.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Builds the crate-wide RNG from a (usually derived) seed.
pub(crate) fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
