//! Tail token drop: keep-length sampling and prefix truncation.
//!
//! During training a keep-length `L` is drawn uniformly from `{1..=N}` and
//! the quantized token sequence is truncated to its first `L` entries before
//! the decoder. The drop stream is seeded independently of weight init and
//! data shuffling so drop schedules are reproducible in isolation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::config::DropGranularity;
use crate::error::{Error, Result};
use crate::rng;

/// Parameters of the tail-drop schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DropPolicy {
    pub n_max: usize,
    pub granularity: DropGranularity,
    pub rng_seed: u64,
}

impl DropPolicy {
    pub fn new(n_max: usize, granularity: DropGranularity, rng_seed: u64) -> Result<Self> {
        if n_max == 0 {
            return Err(Error::invalid_input("n_max must be at least 1"));
        }
        Ok(Self { n_max, granularity, rng_seed })
    }

    /// Start the policy's dedicated drop stream.
    pub fn sampler(&self) -> DropSampler {
        DropSampler { n_max: self.n_max, granularity: self.granularity, rng: rng::rng_from_seed(self.rng_seed) }
    }
}

/// Owned RNG state drawing keep-lengths from a policy.
#[derive(Debug, Clone)]
pub struct DropSampler {
    n_max: usize,
    granularity: DropGranularity,
    rng: ChaCha8Rng,
}

impl DropSampler {
    /// Draw one keep-length, uniform over `{1..=n_max}`.
    pub fn sample_keep_length(&mut self) -> usize {
        self.rng.random_range(1..=self.n_max)
    }

    /// Keep-lengths for one batch: a single shared draw under `PerBatch`
    /// granularity, an independent draw per sample under `PerSample`.
    pub fn sample_batch(&mut self, batch_size: usize) -> Vec<usize> {
        match self.granularity {
            DropGranularity::PerBatch => vec![self.sample_keep_length(); batch_size],
            DropGranularity::PerSample => (0..batch_size).map(|_| self.sample_keep_length()).collect(),
        }
    }
}

/// The exact prefix of length `keep`; the input is unmodified.
pub fn truncate<T: Clone>(seq: &[T], keep: usize) -> Result<Vec<T>> {
    if keep == 0 || keep > seq.len() {
        return Err(Error::invalid_input(format!(
            "keep length {} out of range 1..={}",
            keep,
            seq.len()
        )));
    }
    Ok(seq[..keep].to_vec())
}
