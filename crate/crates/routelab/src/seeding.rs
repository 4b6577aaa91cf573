//! Labeled seed derivation.
//!
//! All randomness in the workbench flows from a single root seed through
//! named derivations, so adding a consumer never reshuffles another. A
//! derivation is keyed by `(root, label, index)`; per-item streams use the
//! item id as the label so per-query draws are stable under corpus growth.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over the label bytes, then splitmix-style avalanche with the
/// root seed and index folded in.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = FNV_OFFSET ^ root.rotate_left(17);
    for &b in label.as_bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h ^= index;
    h = h.wrapping_mul(FNV_PRIME);
    splitmix64(h)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Deterministic generator for a named stream. ChaCha8 is stable across
/// platforms and `rand` releases, which the reproducibility contract
/// depends on.
pub fn derive_rng(root: u64, label: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, label, index))
}
