//! Seed derivation for independent, reproducible random streams.
//!
//! Every consumer of randomness (inducing-point placement, candidate pools,
//! test locations, jitter, label sampling) gets its own ChaCha stream whose
//! seed is a hash of the master seed and a purpose tag, so adding or
//! reordering draws in one stream never perturbs another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a base seed with a sequence of tags into a new seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(base), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Stable 64-bit tag for a purpose label.
pub fn tag(label: &str) -> u64 {
    // FNV-1a
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

pub fn stream(base: u64, label: &str, indices: &[u64]) -> StreamRng {
    let mut tags = Vec::with_capacity(indices.len() + 1);
    tags.push(tag(label));
    tags.extend_from_slice(indices);
    StreamRng::seed_from_u64(derive_seed(base, &tags))
}
