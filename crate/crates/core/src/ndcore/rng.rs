//! Seeded random streams.
//!
//! Every stream is a ChaCha8 generator keyed by a 64-bit seed (expanded with
//! PCG32 as `rand_core::SeedableRng::seed_from_u64` documents) and a 64-bit
//! stream id. ChaCha is counter-based, so sequences are identical on every
//! platform. Derived values:
//!
//! * uniform: 53 random mantissa bits scaled into `[0, 1)`;
//! * normal: ziggurat transform of the uniform stream (`rand_distr::StandardNormal`);
//! * gamma: Marsaglia–Tsang squeeze/rejection (`rand_distr::Gamma`);
//! * permutation: forward Fisher–Yates.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

#[derive(Clone, Debug)]
pub struct RngStream {
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream `stream` under the same seed (e.g. one per patch or tree).
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Uniform integer in `0..n`; `n` must be positive.
    pub fn index(&mut self, n: usize) -> usize {
        assert!(n > 0, "index range must be non-empty");
        self.inner.random_range(0..n as u64) as usize
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    /// Gamma variate with the given shape and scale (mean `shape * scale`).
    pub fn gamma(&mut self, shape: f64, scale: f64) -> f64 {
        Gamma::new(shape, scale)
            .expect("gamma shape and scale must be positive and finite")
            .sample(&mut self.inner)
    }

    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut p: Vec<usize> = (0..n).collect();
        self.shuffle(&mut p);
        p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        let n = items.len();
        for i in 0..n.saturating_sub(1) {
            let j = i + self.index(n - i);
            items.swap(i, j);
        }
    }

    /// `k` distinct indices from `0..n`, in sampling order.
    pub fn sample_without_replacement(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot draw {k} of {n} without replacement");
        let mut p: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.index(n - i);
            p.swap(i, j);
        }
        p.truncate(k);
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_stream() {
        let mut a = RngStream::new(42);
        let mut b = RngStream::new(42);
        for _ in 0..1000 {
            assert_eq!(a.uniform().to_bits(), b.uniform().to_bits());
        }
    }

    #[test]
    fn different_seeds_differ() {
        let mut a = RngStream::new(1);
        let mut b = RngStream::new(2);
        let da: Vec<u64> = (0..16).map(|_| a.next_u64()).collect();
        let db: Vec<u64> = (0..16).map(|_| b.next_u64()).collect();
        assert_ne!(da, db);
    }

    #[test]
    fn derived_streams_are_distinct() {
        let mut a = RngStream::derived(7, 0);
        let mut b = RngStream::derived(7, 1);
        assert_ne!(a.next_u64(), b.next_u64());
    }

    #[test]
    fn uniform_mean_is_half() {
        let mut r = RngStream::new(3);
        let n = 100_000;
        let mean = (0..n).map(|_| r.uniform()).sum::<f64>() / n as f64;
        assert!((0.497..=0.503).contains(&mean), "mean {mean}");
    }

    #[test]
    fn uniform_in_unit_interval() {
        let mut r = RngStream::new(5);
        assert!((0..10_000).map(|_| r.uniform()).all(|u| (0.0..1.0).contains(&u)));
    }

    #[test]
    fn normal_and_gamma_moments() {
        let mut r = RngStream::new(11);
        let n = 50_000;
        let xs: Vec<f64> = (0..n).map(|_| r.normal()).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.02 && (var - 1.0).abs() < 0.03);
        let gs: Vec<f64> = (0..n).map(|_| r.gamma(4.0, 0.25)).collect();
        let gmean = gs.iter().sum::<f64>() / n as f64;
        assert!((gmean - 1.0).abs() < 0.02, "gamma mean {gmean}");
        assert!(gs.iter().all(|&g| g > 0.0));
    }

    #[test]
    fn permutation_is_a_permutation() {
        let mut r = RngStream::new(9);
        let mut p = r.permutation(100);
        p.sort_unstable();
        assert_eq!(p, (0..100).collect::<Vec<_>>());
    }
}
