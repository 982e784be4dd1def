//! Stable hashing and seed derivation.
//!
//! Everything that must replay bit-for-bit (mock backends, candidate seeds,
//! sample seeds) goes through SHA-256 rather than `std::hash`, whose output is
//! not guaranteed across releases.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn sha256(bytes: &[u8]) -> [u8; 32] {
    Sha256::digest(bytes).into()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    sha256(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash an ordered list of byte strings into a `u64`. Parts are
/// length-prefixed so `["ab", "c"]` and `["a", "bc"]` differ.
pub fn stable_hash(parts: &[&[u8]]) -> u64 {
    let mut hasher = Sha256::new();
    for part in parts {
        hasher.update((part.len() as u64).to_le_bytes());
        hasher.update(part);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Derive a child seed from a parent seed, a purpose tag and an index.
pub fn derive_seed(parent: u64, tag: &str, index: u64) -> u64 {
    stable_hash(&[&parent.to_le_bytes(), tag.as_bytes(), &index.to_le_bytes()])
}

pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
