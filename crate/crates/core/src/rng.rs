//! Seed derivation and deterministic sampling helpers.
//!
//! Every source of randomness in the crate draws from a ChaCha stream seeded
//! either explicitly or by deriving a labeled sub-seed from the master seed,
//! so the weight-init, data-order, and drop-schedule streams can be
//! reproduced independently of each other.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derive a labeled sub-seed from a master seed.
pub fn derive_seed(master: u64, label: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(master.to_le_bytes());
    hasher.update(label.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

/// The crate-standard RNG, constructed from a 64-bit seed.
pub fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Sample from a normal distribution truncated at two standard deviations,
/// by rejection.
pub fn truncated_normal(rng: &mut impl Rng, std: f32, n: usize) -> Vec<f32> {
    let dist = rand_distr::Normal::new(0.0f32, std).expect("std is finite");
    let bound = 2.0 * std;
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let x: f32 = rng.sample(dist);
        if x.abs() <= bound {
            out.push(x);
        }
    }
    out
}

/// Sample `n` values uniformly from `[lo, hi)`.
pub fn uniform(rng: &mut impl Rng, lo: f32, hi: f32, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(42, "weights");
        let b = derive_seed(42, "data");
        let c = derive_seed(43, "weights");
        assert_eq!(a, derive_seed(42, "weights"));
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn truncated_normal_respects_bounds() {
        let mut rng = rng_from_seed(7);
        let xs = truncated_normal(&mut rng, 0.02, 10_000);
        assert!(xs.iter().all(|x| x.abs() <= 0.04));
        let mean = xs.iter().sum::<f32>() / xs.len() as f32;
        assert!(mean.abs() < 1e-3);
    }

    #[test]
    fn same_seed_same_stream() {
        let a: Vec<f32> = uniform(&mut rng_from_seed(1), 0.0, 1.0, 32);
        let b: Vec<f32> = uniform(&mut rng_from_seed(1), 0.0, 1.0, 32);
        assert_eq!(a, b);
    }
}
