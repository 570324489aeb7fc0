//! Seeded, splittable random source.
//!
//! Every generator is a ChaCha8 keystream keyed by the 64-bit experiment
//! seed. Independent purposes (data, weight init, Monte Carlo sampling, ...)
//! read from disjoint ChaCha stream ids, so adding draws to one purpose never
//! shifts the values seen by another. ChaCha8 output is specified bit-for-bit,
//! which makes draws identical across platforms.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::tensor::Tensor;

/// What a substream is used for. The discriminant is part of the stream id
/// and must never be reordered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u32)]
pub enum Stream {
    Root = 0,
    Features = 1,
    Noise = 2,
    BnnInit = 3,
    VnetInit = 4,
    BnnShuffle = 5,
    BnnSampling = 6,
    VnetShuffle = 7,
    Residuals = 8,
    Evaluation = 9,
    Prediction = 10,
    Test = 11,
}

#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    stream: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    fn with_stream(seed: u64, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        Self {
            seed,
            stream,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh generator for `(purpose, index)` under the same seed. Does not
    /// consume any state from `self`.
    pub fn substream(&self, purpose: Stream, index: u32) -> Rng {
        Self::with_stream(self.seed, ((purpose as u64) << 32) | index as u64)
    }

    pub fn stream_id(&self) -> u64 {
        self.stream
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }

    /// I.i.d. N(0, 1) tensor of the given shape.
    pub fn gaussian_draw(&mut self, shape: &[usize]) -> Tensor {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| self.standard_normal()).collect();
        Tensor::new(shape.to_vec(), data).expect("length matches shape")
    }
}
