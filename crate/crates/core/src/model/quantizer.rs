//! Nearest-neighbor vector quantization with a straight-through gradient
//! path.

use candle_core::{Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::transformer::Params;
use crate::model::LatentSequence;
use crate::rng::uniform;
use crate::tokens::TokenSequence;

/// Learned embedding table plus usage counters.
pub struct Codebook {
    entries: Var,
    size: usize,
    dim: usize,
    /// Cumulative per-entry selection counts over the whole training run.
    usage: Vec<u64>,
    /// Selection counts since the last dead-entry reseeding pass.
    window: Vec<u64>,
}

impl Codebook {
    /// Initialize entries uniformly over the unit hypercube scaled by
    /// `1/sqrt(dim)`.
    pub fn init(params: &mut Params, rng: &mut ChaCha8Rng, size: usize, dim: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::config("codebook must not be empty"));
        }
        let hi = 1.0 / (dim as f32).sqrt();
        let data = uniform(rng, 0.0, hi, size * dim);
        let entries = params.from_values("quant.codebook", data, &[size, dim])?;
        // The registered tensor shares storage with the Var in `params`;
        // keep the Var handle for direct row edits during reseeding.
        let var = params.get("quant.codebook").expect("just registered").clone();
        let _ = entries;
        Ok(Self { entries: var, size, dim, usage: vec![0; size], window: vec![0; size] })
    }

    /// Wrap an existing table (checkpoint load, tests).
    pub fn from_var(entries: Var, usage: Vec<u64>) -> Result<Self> {
        let (size, dim) = entries.as_tensor().dims2()?;
        if usage.len() != size {
            return Err(Error::config("usage counter length does not match codebook size"));
        }
        Ok(Self { entries, size, dim, usage, window: vec![0; size] })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &Tensor {
        self.entries.as_tensor()
    }

    pub fn usage_counts(&self) -> &[u64] {
        &self.usage
    }

    pub fn used_fraction(&self) -> f64 {
        let used = self.usage.iter().filter(|&&c| c > 0).count();
        used as f64 / self.size as f64
    }

    /// Entry rows as a flat `size * dim` vector.
    pub fn rows(&self) -> Result<Vec<f32>> {
        Ok(self.entries.as_tensor().flatten_all()?.to_vec1::<f32>()?)
    }

    /// Nearest entry id for each row of `latents` (`n x dim`, flat).
    /// Euclidean distance, ties broken by lowest index.
    pub fn nearest_ids(&self, latents: &[f32]) -> Result<Vec<u32>> {
        if latents.len() % self.dim != 0 {
            return Err(Error::invalid_input("latent row width does not match codebook dim"));
        }
        let table = self.rows()?;
        if !table.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("codebook contains non-finite entries".into()));
        }
        let dim = self.dim;
        let ids: Vec<u32> = latents
            .par_chunks(dim)
            .map(|row| {
                let mut best = f32::INFINITY;
                let mut best_id = 0u32;
                for (k, entry) in table.chunks(dim).enumerate() {
                    // Sequential accumulation; partial sums are monotone, so
                    // abandoning at >= best cannot change the winner.
                    let mut acc = 0f32;
                    for i in 0..dim {
                        let d = row[i] - entry[i];
                        acc += d * d;
                        if acc >= best {
                            break;
                        }
                    }
                    if acc < best {
                        best = acc;
                        best_id = k as u32;
                    }
                }
                best_id
            })
            .collect();
        Ok(ids)
    }

    /// Gather codebook rows for `ids`; differentiable with respect to the
    /// codebook.
    pub fn embed_ids(&self, ids: &[u32], device: &candle_core::Device) -> Result<Tensor> {
        let idx = Tensor::from_vec(ids.to_vec(), ids.len(), device)?;
        Ok(self.entries.as_tensor().index_select(&idx, 0)?)
    }

    /// Quantize one latent sequence: token ids plus the exact codebook rows.
    pub fn quantize(&self, latents: &LatentSequence) -> Result<(TokenSequence, LatentSequence)> {
        if latents.dim() != self.dim {
            return Err(Error::invalid_input(format!(
                "latent dim {} does not match codebook dim {}",
                latents.dim(),
                self.dim
            )));
        }
        let ids = self.nearest_ids(latents.values())?;
        let table = self.rows()?;
        let mut quantized = Vec::with_capacity(latents.values().len());
        for &id in &ids {
            let row = &table[id as usize * self.dim..(id as usize + 1) * self.dim];
            quantized.extend_from_slice(row);
        }
        let q = TokenSequence::new(ids)?;
        let zq = LatentSequence::new(latents.len(), self.dim, quantized)?;
        Ok((q, zq))
    }

    pub fn record_usage(&mut self, ids: &[u32]) {
        for &id in ids {
            self.usage[id as usize] += 1;
            self.window[id as usize] += 1;
        }
    }

    /// Replace entries unused since the last pass with rows drawn from
    /// `pool` (flat `n x dim`), then reset the window counters.
    /// Returns the number of reseeded entries.
    pub fn reseed_dead(&mut self, pool: &[f32], rng: &mut ChaCha8Rng) -> Result<usize> {
        let n_pool = pool.len() / self.dim;
        if n_pool == 0 {
            return Ok(0);
        }
        let mut table = self.rows()?;
        let mut reseeded = 0;
        for k in 0..self.size {
            if self.window[k] == 0 {
                let pick = rng.random_range(0..n_pool);
                table[k * self.dim..(k + 1) * self.dim]
                    .copy_from_slice(&pool[pick * self.dim..(pick + 1) * self.dim]);
                reseeded += 1;
            }
        }
        if reseeded > 0 {
            let t = Tensor::from_vec(table, (self.size, self.dim), self.entries.device())?;
            self.entries.set(&t)?;
        }
        self.window.iter_mut().for_each(|w| *w = 0);
        Ok(reseeded)
    }

    /// Overwrite usage counters (checkpoint load).
    pub fn set_usage(&mut self, usage: Vec<u64>) -> Result<()> {
        if usage.len() != self.size {
            return Err(Error::config("usage counter length does not match codebook size"));
        }
        self.usage = usage;
        Ok(())
    }
}

/// Straight-through estimator: forwards `quantized`, but the gradient with
/// respect to the pre-quantization latents is the identity.
pub fn straight_through(latents: &Tensor, quantized: &Tensor) -> Result<Tensor> {
    Ok((latents + (quantized - latents)?.detach())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use candle_core::Device;

    fn codebook_from(rows: &[f32], dim: usize) -> Codebook {
        let dev = Device::Cpu;
        let t = Tensor::from_vec(rows.to_vec(), (rows.len() / dim, dim), &dev).unwrap();
        let var = Var::from_tensor(&t).unwrap();
        Codebook::from_var(var, vec![0; rows.len() / dim]).unwrap()
    }

    #[test]
    fn nearest_matches_hand_case() {
        // 1-D codebook [0.0, 1.0]: latent 0.4 maps to entry 0.
        let cb = codebook_from(&[0.0, 1.0], 1);
        assert_eq!(cb.nearest_ids(&[0.4]).unwrap(), vec![0]);
        assert_eq!(cb.nearest_ids(&[0.6]).unwrap(), vec![1]);
    }

    #[test]
    fn tie_breaks_to_lowest_index() {
        let cb = codebook_from(&[0.0, 1.0], 1);
        assert_eq!(cb.nearest_ids(&[0.5]).unwrap(), vec![0]);
        // Duplicate entries: always the first.
        let cb = codebook_from(&[0.3, 0.3, 0.3], 1);
        assert_eq!(cb.nearest_ids(&[0.9]).unwrap(), vec![0]);
    }

    #[test]
    fn exact_entry_is_identity() {
        let rows = [0.1f32, 0.2, 0.3, -0.4, 0.5, 0.6, 0.7, 0.8];
        let cb = codebook_from(&rows, 2);
        let latents = LatentSequence::new(1, 2, vec![0.7, 0.8]).unwrap();
        let (q, zq) = cb.quantize(&latents).unwrap();
        assert_eq!(q.ids(), &[3]);
        assert_eq!(zq.values(), &[0.7, 0.8]);
    }

    #[test]
    fn straight_through_passes_identity_gradient() {
        let dev = Device::Cpu;
        let z = Var::from_tensor(&Tensor::from_vec(vec![0.4f32], 1, &dev).unwrap()).unwrap();
        let e = Tensor::from_vec(vec![1.0f32], 1, &dev).unwrap();
        let zq = straight_through(z.as_tensor(), &e).unwrap();
        // Forward takes the quantized value.
        assert_eq!(zq.to_vec1::<f32>().unwrap(), vec![1.0]);
        // Backward treats quantization as identity.
        let loss = zq.sqr().unwrap().sum_all().unwrap();
        let grads = loss.backward().unwrap();
        let g = grads.get(z.as_tensor()).unwrap().to_vec1::<f32>().unwrap();
        assert!((g[0] - 2.0).abs() < 1e-6); // d(zq^2)/dz = 2*zq * 1
    }

    #[test]
    fn reseed_replaces_only_dead_entries() {
        let mut cb = codebook_from(&[0.0, 10.0, 20.0], 1);
        cb.record_usage(&[1]);
        let mut rng = rng_from_seed(0);
        let pool = vec![5.0f32, 6.0];
        let n = cb.reseed_dead(&pool, &mut rng).unwrap();
        assert_eq!(n, 2);
        let rows = cb.rows().unwrap();
        assert_eq!(rows[1], 10.0); // used entry untouched
        assert!(rows[0] == 5.0 || rows[0] == 6.0);
        assert!(rows[2] == 5.0 || rows[2] == 6.0);
    }
}
