//! Deterministic randomness.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose 32-byte
//! seed is `SHA-256(domain || 0x00 || seed as little-endian u64 || 0x00 || key)`.
//! Keying streams by name (a concept, a label) keeps each draw independent of
//! the order in which keys are visited. Shuffling is a plain Fisher-Yates with
//! rejection-sampled bounded integers, so results do not depend on the
//! internals of any particular `rand` release.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use sha2::{Digest, Sha256};

/// Seeded generator for the stream `(domain, seed, key)`.
pub fn keyed_rng(domain: &str, seed: u64, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(domain.as_bytes());
    hasher.update([0u8]);
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut bytes = [0u8; 32];
    bytes.copy_from_slice(digest.as_slice());
    ChaCha8Rng::from_seed(bytes)
}

/// Uniform integer in `0..bound`. `bound` must be positive.
pub fn uniform_below(rng: &mut impl RngCore, bound: u64) -> u64 {
    assert!(bound > 0, "empty range");
    // largest multiple of bound that fits in u64
    let zone = u64::MAX - (u64::MAX % bound + 1) % bound;
    loop {
        let x = rng.next_u64();
        if x <= zone {
            return x % bound;
        }
    }
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = uniform_below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
