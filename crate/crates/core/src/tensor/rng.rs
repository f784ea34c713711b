use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{lit, Scalar, Tensor};

/// Seeded random source for initialization, shuffling and dropout masks.
///
/// Backed by ChaCha8, so a seed yields the same stream on every platform.
#[derive(Clone, Debug)]
pub struct Generator {
    inner: ChaCha8Rng,
}

impl Generator {
    pub fn seeded(seed: u64) -> Self {
        Generator { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent generator for a named sub-stream of `seed`.
    pub fn derived(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Generator { inner }
    }

    pub fn next_f64(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random::<u64>()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn uniform<F: Scalar>(&mut self, shape: &[usize], lo: f64, hi: f64) -> Tensor<F> {
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(lo + (hi - lo) * self.next_f64())).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    pub fn normal<F: Scalar>(&mut self, shape: &[usize], mean: f64, std: f64) -> Tensor<F> {
        let dist = Normal::new(mean, std).expect("finite normal parameters");
        let n = shape.iter().product();
        let data = (0..n).map(|_| lit(dist.sample(&mut self.inner))).collect();
        Tensor::from_parts(shape.to_vec(), data)
    }

    /// Keep-mask for dropout: entry is `false` (dropped) with probability `p`.
    pub fn bernoulli_mask(&mut self, len: usize, p: f64) -> Vec<bool> {
        (0..len).map(|_| self.next_f64() >= p).collect()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        use rand::seq::SliceRandom;
        items.shuffle(&mut self.inner);
    }
}
