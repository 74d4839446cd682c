//! Seeded randomness shared by every module.
//!
//! All random streams are xoshiro256++ generators whose 256-bit state is
//! expanded from a 64-bit seed with SplitMix64. Subset indices are drawn
//! with a partial Fisher-Yates shuffle using Lemire's multiply-shift
//! bounded integers, so index sets can be reproduced from these
//! definitions alone in any language.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

pub type StreamRng = Xoshiro256PlusPlus;

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Generator for `seed`.
pub fn stream(seed: u64) -> StreamRng {
    Xoshiro256PlusPlus::seed_from_u64(seed)
}

/// SplitMix64 output function applied to `x + GOLDEN_GAMMA`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a 64-bit hash of a string.
pub fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Order-sensitive hash of a sequence of words: `h <- splitmix64(h ^ w)`
/// starting from `h = 0`.
pub fn hash64(words: &[u64]) -> u64 {
    words.iter().fold(0u64, |h, &w| splitmix64(h ^ w))
}

/// Uniform integer in `[0, bound)` (Lemire 2019, with rejection).
pub fn below(rng: &mut impl RngCore, bound: u64) -> u64 {
    assert!(bound > 0, "bound must be positive");
    let mut m = u128::from(rng.next_u64()) * u128::from(bound);
    let mut low = m as u64;
    if low < bound {
        let threshold = bound.wrapping_neg() % bound;
        while low < threshold {
            m = u128::from(rng.next_u64()) * u128::from(bound);
            low = m as u64;
        }
    }
    (m >> 64) as u64
}

/// `k` distinct indices from `0..n`, ascending.
pub fn choose_sorted(n: usize, k: usize, seed: u64) -> Vec<usize> {
    assert!(k <= n);
    let mut rng = stream(seed);
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + below(&mut rng, (n - i) as u64) as usize;
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool.sort_unstable();
    pool
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splitmix_reference_values() {
        // First outputs of the reference SplitMix64 stream seeded with 0.
        let mut state = 0u64;
        let mut next = || {
            let out = splitmix64(state);
            state = state.wrapping_add(GOLDEN_GAMMA);
            out
        };
        assert_eq!(next(), 0xe220a8397b1dcdaf);
        assert_eq!(next(), 0x6e789e6aa1b965f4);
        assert_eq!(next(), 0x06c45d188009454f);
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn below_stays_in_range() {
        let mut rng = stream(3);
        for bound in [1u64, 2, 3, 7, 1000, u64::MAX] {
            for _ in 0..200 {
                assert!(below(&mut rng, bound) < bound);
            }
        }
    }

    #[test]
    fn choose_sorted_is_distinct_and_sorted() {
        let idx = choose_sorted(100, 40, 9);
        assert_eq!(idx.len(), 40);
        assert!(idx.windows(2).all(|w| w[0] < w[1]));
        assert!(idx.iter().all(|&i| i < 100));
        assert_eq!(idx, choose_sorted(100, 40, 9));
        assert_ne!(idx, choose_sorted(100, 40, 10));
        assert_eq!(choose_sorted(5, 5, 1), vec![0, 1, 2, 3, 4]);
    }
}
