//! Deterministic seed derivation.
//!
//! `derive_seed(master, repetition, tag)` chains SplitMix64 finalizers over
//! the master seed, the repetition index and a 64-bit FNV-1a hash of the tag:
//!
//! ```text
//! h = mix64(fnv1a(tag))
//! h = mix64(h ^ repetition)
//! seed = mix64(h ^ master)
//! ```

/// SplitMix64 output function.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

pub fn derive_seed(master: u64, repetition: u64, tag: &str) -> u64 {
    let h = mix64(fnv1a(tag.as_bytes()));
    let h = mix64(h ^ repetition);
    mix64(h ^ master)
}

/// `count` seeds for one purpose, indexed by position.
pub fn seed_list(master: u64, repetition: u64, tag: &str, count: usize) -> Vec<u64> {
    let base = derive_seed(master, repetition, tag);
    (0..count as u64).map(|i| mix64(base ^ mix64(i))).collect()
}

/// Purpose tags used throughout the harness.
pub mod tags {
    pub const TRAIN_ENV: &str = "train-env";
    pub const TRAIN_AGENT: &str = "train-agent";
    pub const QUICK_EVAL: &str = "quick-eval";
    pub const FINAL_EVAL: &str = "final-eval";
    pub const EVAL: &str = "eval";
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn derivation_is_stable_and_separates_inputs() {
        assert_eq!(derive_seed(1, 2, "x"), derive_seed(1, 2, "x"));
        assert_ne!(derive_seed(1, 2, tags::TRAIN_ENV), derive_seed(1, 2, tags::QUICK_EVAL));
        let seeds: HashSet<u64> = (0..10_000).map(|r| derive_seed(42, r, tags::TRAIN_ENV)).collect();
        assert_eq!(seeds.len(), 10_000);
        let a: HashSet<u64> = seed_list(7, 0, tags::TRAIN_ENV, 1000).into_iter().collect();
        let b: HashSet<u64> = seed_list(7, 0, tags::FINAL_EVAL, 1000).into_iter().collect();
        assert!(a.is_disjoint(&b));
    }
}
