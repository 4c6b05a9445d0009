//! Seeded random streams.
//!
//! Every stream is a ChaCha8 keystream. The 64-bit seed is expanded into the
//! 256-bit key with `SeedableRng::seed_from_u64`, and the label picks the
//! ChaCha stream id through FNV-1a-64. Streams sharing a seed but carrying
//! different labels therefore draw from disjoint keystreams.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(label: &str) -> u64 {
    label.bytes().fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::derive(seed, "")
    }

    pub fn derive(seed: u64, label: &str) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(fnv1a(label));
        Self { seed, label: label.to_owned(), rng }
    }

    /// Independent stream keyed by this stream's seed and an extended label.
    /// Does not consume draws from `self`.
    pub fn child(&self, label: &str) -> Self {
        if self.label.is_empty() {
            Self::derive(self.seed, label)
        } else {
            Self::derive(self.seed, &format!("{}/{label}", self.label))
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    /// Uniform on [0, 1) with 53 random bits.
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n as u64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.rng);
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    /// `k` distinct indices from `0..n` (partial Fisher–Yates), `k <= n`.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_seeds_equal_draws() {
        let mut a = RngStream::derive(42, "x");
        let mut b = RngStream::derive(42, "x");
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn labels_separate_streams() {
        let mut a = RngStream::derive(42, "x");
        let mut b = RngStream::derive(42, "y");
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        assert!(xs.iter().all(|x| !ys.contains(x)));
    }

    #[test]
    fn child_matches_derive() {
        let parent = RngStream::derive(7, "run");
        let mut c = parent.child("init");
        let mut d = RngStream::derive(7, "run/init");
        assert_eq!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn frozen_first_draws() {
        // pins the generator so a dependency bump that changes the stream is caught
        let mut r = RngStream::new(0);
        let first = r.next_u64();
        assert_eq!(first, 0xc4c2_7672_cb9a_7526);
        let u = RngStream::new(1).uniform();
        assert!((0.0..1.0).contains(&u));
    }

    #[test]
    fn sampling_without_replacement_is_distinct() {
        let mut r = RngStream::new(3);
        let mut s = r.sample_without_replacement(10, 10);
        s.sort_unstable();
        assert_eq!(s, (0..10).collect::<Vec<_>>());
    }
}
