//! Seeded, splittable randomness.
//!
//! Every random draw in the crate goes through [`Rng`]. A child stream is a
//! pure function of `(parent seed, stream id)`, never of how many values the
//! parent has already produced, so work can be fanned out across threads and
//! still reproduce bit-for-bit.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic random stream keyed by a 64-bit seed.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Derives an independent child stream. The result depends only on this
    /// stream's seed and `stream_id`.
    pub fn split(&self, stream_id: u64) -> Rng {
        let child = mix64(self.seed ^ mix64(stream_id.wrapping_add(0x9e37_79b9_7f4a_7c15)));
        Rng::new(child)
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.gen::<f64>()
    }

    /// Uniform integer in `[0, n)`. Panics when `n == 0`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.gen_range(0..n)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Standard normal via Box-Muller.
    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Standard Gumbel(0, 1) draw.
    pub fn gumbel(&mut self) -> f64 {
        // keep u strictly inside (0, 1)
        let u = self.uniform().clamp(1e-300, 1.0 - 1e-16);
        -(-u.ln()).ln()
    }

    /// Samples an index from unnormalized nonnegative weights.
    pub fn categorical(&mut self, weights: &[f64]) -> usize {
        let total: f64 = weights.iter().sum();
        let mut u = self.uniform() * total;
        let mut last = 0;
        for (i, &w) in weights.iter().enumerate() {
            if w <= 0.0 {
                continue;
            }
            last = i;
            if u < w {
                return i;
            }
            u -= w;
        }
        last
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }
}

/// Free-function form of [`Rng::split`].
pub fn split_rng(rng: &Rng, stream_id: u64) -> Rng {
    rng.split(stream_id)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_stream_id_is_reproducible() {
        let root = Rng::new(7);
        let mut a = split_rng(&root, 0);
        let mut b = split_rng(&root, 0);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn split_ignores_parent_consumption() {
        let mut root = Rng::new(7);
        let before = root.split(3).next_u64();
        root.uniform();
        assert_eq!(before, root.split(3).next_u64());
    }

    #[test]
    fn distinct_stream_ids_differ() {
        let root = Rng::new(7);
        let a: Vec<u64> = {
            let mut r = root.split(0);
            (0..100).map(|_| r.next_u64()).collect()
        };
        let b: Vec<u64> = {
            let mut r = root.split(1);
            (0..100).map(|_| r.next_u64()).collect()
        };
        assert_ne!(a, b);
    }

    #[test]
    fn uniform_passes_chi_square() {
        // 20 equal bins, 19 dof; the 0.99 quantile is 36.191.
        let mut r = Rng::new(7).split(0);
        let n = 100_000;
        let mut bins = [0usize; 20];
        for _ in 0..n {
            let u = r.uniform();
            assert!((0.0..1.0).contains(&u));
            bins[(u * 20.0) as usize] += 1;
        }
        let expected = n as f64 / 20.0;
        let chi2: f64 = bins.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        assert!(chi2 < 36.191, "chi2 = {chi2}");
    }

    #[test]
    fn categorical_skips_zero_weights() {
        let mut r = Rng::new(1);
        for _ in 0..1000 {
            assert_ne!(r.categorical(&[0.0, 1.0, 0.0, 2.0]) % 2, 0);
        }
    }
}
