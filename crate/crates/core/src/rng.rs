//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a generator keyed by a tuple of
//! integers (run seed, stage, step, slot, ...). Two draws with the same key are
//! identical no matter which thread performs them or in which order, which is
//! what makes parallel replicas, batch assembly and tree sampling reproducible.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds a key path into one 64-bit value.
pub fn hash_key(seed: u64, path: &[u64]) -> u64 {
    let mut h = mix64(seed ^ 0x6D73_6D2D_656D_7521);
    for (i, &p) in path.iter().enumerate() {
        h = mix64(h ^ mix64(p.wrapping_add(i as u64 + 1)));
    }
    h
}

/// Stable 64-bit hash of a string (FNV-1a followed by a finalizer).
pub fn hash_str(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    mix64(h)
}

/// Seed for a named pipeline stage: `hash64(global_seed, stage_name)`.
pub fn stage_seed(global_seed: u64, stage: &str) -> u64 {
    hash_key(global_seed, &[hash_str(stage)])
}

/// A ChaCha8 generator whose 256-bit seed is derived from `(seed, path)`.
pub fn keyed_rng(seed: u64, path: &[u64]) -> ChaCha8Rng {
    let base = hash_key(seed, path);
    let mut bytes = [0u8; 32];
    for (i, chunk) in bytes.chunks_mut(8).enumerate() {
        chunk.copy_from_slice(&mix64(base ^ (i as u64).wrapping_mul(0xA24B_AED4_963E_E407)).to_le_bytes());
    }
    ChaCha8Rng::from_seed(bytes)
}
