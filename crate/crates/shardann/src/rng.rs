//! Deterministic randomness plumbing.
//!
//! Every randomized stage derives its own stream from one master seed and a
//! role tag. Parallel tasks get per-task streams keyed by index, so results
//! do not depend on the schedule or the worker count.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes a master seed with a role tag into an independent child seed.
pub fn split(seed: u64, tag: u64) -> u64 {
    // splitmix64 over the xor of seed and a golden-ratio spaced tag
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A counter-based generator for the given stream seed.
pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Draws `count` distinct indices from `0..n` uniformly without replacement,
/// returned in ascending order.
pub fn sample_without_replacement(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<u32> {
    use rand::seq::index::sample;
    assert!(count <= n);
    let mut picked: Vec<u32> = sample(rng, n, count).iter().map(|i| i as u32).collect();
    picked.sort_unstable();
    picked
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_is_deterministic_and_spreads() {
        assert_eq!(split(42, 1), split(42, 1));
        assert_ne!(split(42, 1), split(42, 2));
        assert_ne!(split(42, 1), split(43, 1));
    }

    #[test]
    fn sampling_is_distinct_and_sorted() {
        let mut r = rng(7);
        let s = sample_without_replacement(&mut r, 100, 30);
        assert_eq!(s.len(), 30);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
    }
}
