//! Seed derivation. Every consumer of randomness gets its own ChaCha20
//! stream keyed by `(root seed, purpose tag)`, so adding a new consumer never
//! shifts the draws of an existing one.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes, folded into the root through splitmix64.
pub fn derive_seed(root: u64, tag: &str) -> u64 {
    let mut h: u64 = 0xCBF2_9CE4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(root ^ splitmix64(h))
}

/// Derives a child seed from a parent seed and an integer index.
pub fn derive_index(root: u64, index: u64) -> u64 {
    splitmix64(root.wrapping_add(splitmix64(index ^ 0xA5A5_A5A5_5A5A_5A5A)))
}

/// Independent generator for `(root, tag)`.
pub fn stream(root: u64, tag: &str) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(derive_seed(root, tag))
}
