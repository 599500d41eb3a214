//! Seed derivation.
//!
//! Every random draw in the crate comes from a [`SplitMix64`] generator. A
//! run has one master seed; independent streams (weight init, scene
//! sampling, utterance synthesis, batch shuffling, ...) are derived from it by
//! mixing the master seed with a label through [`derive_seed`], so adding a
//! new consumer never perturbs existing ones.
//!
//! SplitMix64 (Steele, Lea & Flood) is pinned: state advances by
//! `0x9e3779b97f4a7c15` and outputs pass through the standard
//! `(x ^ x>>30) * 0xbf58476d1ce4e5b9`, `(x ^ x>>27) * 0x94d049bb133111eb`,
//! `x ^ x>>31` finalizer. `f64` draws use the top 53 bits.

pub use rand_xoshiro::SplitMix64;
use rand::SeedableRng;

/// FNV-1a over the label, folded into the seed and finalized.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix64(seed ^ h.rotate_left(17))
}

/// Derives a seed from a parent seed and an index (clip number, epoch, ...).
pub fn derive_indexed(seed: u64, label: &str, index: u64) -> u64 {
    mix64(derive_seed(seed, label).wrapping_add(index.wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

pub fn rng_for(seed: u64, label: &str) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive_seed(seed, label))
}

pub fn rng_indexed(seed: u64, label: &str, index: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(derive_indexed(seed, label, index))
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
