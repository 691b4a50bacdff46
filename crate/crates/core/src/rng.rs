//! Seeded randomness.
//!
//! Every random draw in the crate comes from [`Rng`], a xoshiro256\*\*
//! generator whose 256-bit state is expanded from a single `u64` seed with
//! SplitMix64. Both algorithms are fixed by their published update
//! equations, so a stream is reproducible by any implementation:
//!
//! ```text
//! splitmix64:  z = (s += 0x9e3779b97f4a7c15)
//!              z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9
//!              z = (z ^ (z >> 27)) * 0x94d049bb133111eb
//!              return z ^ (z >> 31)
//!
//! xoshiro256**: result = rotl(s1 * 5, 7) * 9
//!               t = s1 << 17
//!               s2 ^= s0; s3 ^= s1; s1 ^= s2; s0 ^= s3
//!               s2 ^= t;  s3 = rotl(s3, 45)
//! ```
//!
//! Derived draws are defined on top of `next_u64` only:
//! `uniform() = (next_u64 >> 11) * 2^-53` and
//! `below(n) = (next_u64 as u128 * n) >> 64`.

use rand_core::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

/// Version tag recorded in run manifests.
pub const PRNG_NAME: &str = "xoshiro256**/splitmix64-v1";

#[derive(Clone, Debug)]
pub struct Rng(Xoshiro256StarStar);

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    /// Independent stream for a named purpose, derived from a base seed.
    pub fn derive(seed: u64, stream: u64) -> Self {
        Rng::new(seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15).rotate_left(17))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `[0, n)`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Fisher-Yates, swapping index `i` with `below(i + 1)` from the top down.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = Rng::new(42);
        let mut b = Rng::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = Rng::new(1);
        for _ in 0..10_000 {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
        }
    }

    #[test]
    fn shuffle_is_permutation() {
        let mut r = Rng::new(9);
        let mut v: Vec<usize> = (0..50).collect();
        r.shuffle(&mut v);
        let mut s = v.clone();
        s.sort_unstable();
        assert_eq!(s, (0..50).collect::<Vec<_>>());
        assert_ne!(v, s);
    }

    #[test]
    fn below_stays_in_range() {
        let mut r = Rng::new(3);
        for n in 1..40 {
            for _ in 0..50 {
                assert!(r.below(n) < n);
            }
        }
    }
}
