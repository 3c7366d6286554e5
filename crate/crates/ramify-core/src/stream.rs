//! Splittable, counter-based random streams.
//!
//! Monte Carlo replicas and particle lineages each own an independent
//! stream derived from a single master seed. Derivation hashes the parent
//! seed with the child index, so a particle's stream depends only on
//! `(master_seed, replica, lineage)`, never on how many draws any ancestor
//! made or on which thread ran it. Identical seeds therefore reproduce
//! identical forests at any worker count.
//!
//! Generation is splitmix64: a 64-bit counter pushed through an avalanche
//! finalizer. Statistically solid for simulation work and trivially
//! portable.

#[allow(unused_imports)] // inherent f64 methods shadow these under cfg(test)
use crate::num::FloatExt;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;
const FOLD_SALT: u64 = 0x2545_f491_4f6c_dd1d;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded random stream that can spawn independent child streams.
#[derive(Debug, Clone)]
pub struct SeededStream {
    /// Seed of this stream; child derivation hashes this, not the counter,
    /// so children are insensitive to the parent's draw count.
    seed: u64,
    counter: u64,
}

impl SeededStream {
    /// Root stream for a master seed.
    pub fn new(master_seed: u64) -> Self {
        SeededStream {
            seed: mix64(master_seed ^ FOLD_SALT),
            counter: 0,
        }
    }

    /// Derive the `index`-th child stream.
    pub fn child(&self, index: u64) -> Self {
        let seed = mix64(self.seed ^ index.wrapping_mul(GOLDEN_GAMMA).wrapping_add(FOLD_SALT));
        SeededStream { seed, counter: 0 }
    }

    /// Derive a stream from a full lineage path under a root seed.
    pub fn from_path(master_seed: u64, path: &[u64]) -> Self {
        let mut s = SeededStream::new(master_seed);
        for &ix in path {
            s = s.child(ix);
        }
        s
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(
            self.seed
                .wrapping_add(self.counter.wrapping_mul(GOLDEN_GAMMA)),
        )
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via Box–Muller (the second variate is discarded to
    /// keep the stream layout independent of call history).
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform(); // in (0, 1]
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * core::f64::consts::PI * u2).cos()
    }

    /// Exponential holding time with the given rate; `f64::INFINITY` when
    /// the rate is zero.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        if rate <= 0.0 {
            return f64::INFINITY;
        }
        let u = 1.0 - self.uniform();
        -u.ln() / rate
    }

    /// Draw an index with the given (sub-)probability weights; the residual
    /// mass, if any, falls on the last index.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        debug_assert!(!weights.is_empty());
        let u = self.uniform();
        let mut acc = 0.0;
        for (k, &w) in weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return k;
            }
        }
        weights.len() - 1
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_sequence() {
        let mut a = SeededStream::new(42);
        let mut b = SeededStream::new(42);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn children_are_distinct_and_draw_independent() {
        let root = SeededStream::new(7);
        let mut c0 = root.child(0);
        let mut c1 = root.child(1);
        let v0: Vec<u64> = (0..8).map(|_| c0.next_u64()).collect();
        let v1: Vec<u64> = (0..8).map(|_| c1.next_u64()).collect();
        assert_ne!(v0, v1);

        // child derivation ignores the parent's draw count
        let mut used = SeededStream::new(7);
        for _ in 0..13 {
            used.next_u64();
        }
        let mut c0_again = used.child(0);
        let v0_again: Vec<u64> = (0..8).map(|_| c0_again.next_u64()).collect();
        assert_eq!(v0, v0_again);
    }

    #[test]
    fn from_path_matches_chained_children() {
        let direct = SeededStream::from_path(99, &[3, 1, 4]);
        let chained = SeededStream::new(99).child(3).child(1).child(4);
        assert_eq!(direct.clone().next_u64(), chained.clone().next_u64());
    }

    #[test]
    fn uniform_moments() {
        let mut s = SeededStream::new(2024);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let u = s.uniform();
            assert!((0.0..1.0).contains(&u));
            sum += u;
            sumsq += u * u;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
        assert!((var - 1.0 / 12.0).abs() < 0.005, "var {var}");
    }

    #[test]
    fn normal_moments() {
        let mut s = SeededStream::new(5);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = s.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn exponential_mean() {
        let mut s = SeededStream::new(11);
        let rate = 2.5;
        let n = 200_000;
        let mean: f64 = (0..n).map(|_| s.exponential(rate)).sum::<f64>() / n as f64;
        assert!((mean - 1.0 / rate).abs() < 0.01, "mean {mean}");
        assert_eq!(s.exponential(0.0), f64::INFINITY);
    }
}
