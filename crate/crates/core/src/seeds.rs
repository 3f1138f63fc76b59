//! Deterministic sub-seed derivation.
//!
//! One experiment seed fans out into independent streams (data generation,
//! corruption, model init, batch shuffling, ...) through a fixed mix, so adding
//! a consumer never perturbs the draws of existing ones.

/// SplitMix64 finalizer.
fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// FNV-1a over the tag bytes.
fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Stable sub-seed for `(seed, tag)`.
pub fn derive(seed: u64, tag: &str) -> u64 {
    splitmix(seed ^ fnv1a(tag))
}

/// Stable sub-seed for `(seed, tag, index)`, used for per-epoch streams.
pub fn derive_indexed(seed: u64, tag: &str, index: u64) -> u64 {
    splitmix(derive(seed, tag) ^ splitmix(index))
}
