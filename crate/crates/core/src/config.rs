//! Configuration schema, JSON loading, and `key=value` overrides.
//!
//! Precedence is defaults < config file < overrides. All keys are validated
//! against the schema; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Geometry and capacity of the tokenizer model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Side length of the (square) input image in pixels.
    pub image_size: usize,
    /// Number of image channels.
    pub channels: usize,
    /// Side length of a square patch; must divide `image_size`.
    pub patch_size: usize,
    /// Number of latent tokens `N`; also the maximum token-sequence length.
    pub n_latent_tokens: usize,
    /// Codebook size `K`.
    pub codebook_size: usize,
    /// Dimensionality of each codebook entry and quantized latent.
    pub token_dim: usize,
    pub encoder_width: usize,
    pub encoder_depth: usize,
    pub encoder_heads: usize,
    pub decoder_width: usize,
    pub decoder_depth: usize,
    pub decoder_heads: usize,
    /// Hidden channels of the convolutional upscaler.
    pub upscaler_channels: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            image_size: 32,
            channels: 3,
            patch_size: 4,
            n_latent_tokens: 32,
            codebook_size: 4096,
            token_dim: 12,
            encoder_width: 128,
            encoder_depth: 4,
            encoder_heads: 4,
            decoder_width: 128,
            decoder_depth: 4,
            decoder_heads: 4,
            upscaler_channels: 64,
        }
    }
}

impl ModelConfig {
    /// Number of patches per side of the image grid.
    pub fn grid_size(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Total number of image patches.
    pub fn n_patches(&self) -> usize {
        self.grid_size() * self.grid_size()
    }

    /// Bits needed to store one token id: `ceil(log2(K))`.
    pub fn bits_per_token(&self) -> u8 {
        let k = self.codebook_size as u64;
        let mut bits = 0u8;
        while (1u64 << bits) < k {
            bits += 1;
        }
        bits.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size == 0 || self.patch_size == 0 {
            return Err(Error::config("image_size and patch_size must be positive"));
        }
        if self.image_size % self.patch_size != 0 {
            return Err(Error::config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.channels == 0 {
            return Err(Error::config("channels must be positive"));
        }
        if self.codebook_size < 2 {
            return Err(Error::config("codebook_size must be at least 2"));
        }
        if self.token_dim == 0 {
            return Err(Error::config("token_dim must be at least 1"));
        }
        if self.n_latent_tokens == 0 {
            return Err(Error::config("n_latent_tokens must be at least 1"));
        }
        if self.codebook_size > (1 << 16) {
            return Err(Error::config("codebook_size above 65536 not representable in the stream format"));
        }
        if self.encoder_width % self.encoder_heads != 0 || self.decoder_width % self.decoder_heads != 0 {
            return Err(Error::config("transformer width must be divisible by head count"));
        }
        Ok(())
    }
}

/// Granularity at which a keep-length is sampled during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropGranularity {
    /// One keep-length per batch (default).
    PerBatch,
    /// An independent keep-length per sample.
    PerSample,
}

/// Tail-token-drop settings (`ttd.*` config keys).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TtdConfig {
    /// Disabling yields the fixed-length ablation baseline.
    pub enabled: bool,
    pub granularity: DropGranularity,
    /// Explicit seed for the drop stream; derived from the master seed when
    /// absent.
    pub seed: Option<u64>,
}

impl Default for TtdConfig {
    fn default() -> Self {
        Self { enabled: true, granularity: DropGranularity::PerBatch, seed: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.99, weight_decay: 1e-4, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub warmup_steps: usize,
    pub end_lr: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { warmup_steps: 500, end_lr: 1e-5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentationConfig {
    pub random_crop: bool,
    pub random_flip: bool,
}

impl Default for AugmentationConfig {
    fn default() -> Self {
        Self { random_crop: true, random_flip: true }
    }
}

/// Loss-term weights. Perceptual and GAN terms are extension hooks; their
/// weights default to zero and no built-in implementation is provided.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub commitment_weight: f64,
    pub codebook_weight: f64,
    pub perceptual_weight: f64,
    pub gan_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { commitment_weight: 0.25, codebook_weight: 1.0, perceptual_weight: 0.0, gan_weight: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Hard cap on optimizer steps; takes precedence over `epochs` when set.
    pub steps: Option<usize>,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: ScheduleConfig,
    pub augmentation: AugmentationConfig,
    pub loss: LossConfig,
    /// Master seed; all RNG streams (weights, data order, drop schedule)
    /// derive from it unless overridden.
    pub seed: u64,
    /// Steps between periodic checkpoints. 0 disables periodic checkpoints;
    /// a final checkpoint is always written.
    pub checkpoint_interval: usize,
    /// Global-norm gradient clip.
    pub grad_clip: f64,
    /// Steps between dead-codebook-entry reseeding passes.
    pub codebook_reseed_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            steps: None,
            batch_size: 16,
            optimizer: OptimizerConfig::default(),
            schedule: ScheduleConfig::default(),
            augmentation: AugmentationConfig::default(),
            loss: LossConfig::default(),
            seed: 0,
            checkpoint_interval: 1000,
            grad_clip: 1.0,
            codebook_reseed_interval: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.epochs == 0 && self.steps.is_none() {
            return Err(Error::config("either epochs or steps must be positive"));
        }
        if let Some(0) = self.steps {
            return Err(Error::config("steps must be positive when set"));
        }
        if !(self.optimizer.lr > self.schedule.end_lr && self.schedule.end_lr >= 0.0) {
            return Err(Error::config("require lr > end_lr >= 0"));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::config("grad_clip must be positive"));
        }
        Ok(())
    }
}

/// Top-level configuration: `model.*`, `train.*`, and `ttd.*` sections.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub ttd: TtdConfig,
}

impl Config {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()
    }

    /// Load from a JSON file, falling back to defaults for absent keys.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| Error::config(format!("cannot read {:?}: {e}", path.as_ref())))?;
        let cfg: Config = serde_json::from_str(&text)
            .map_err(|e| Error::config(format!("cannot parse {:?}: {e}", path.as_ref())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply `key=value` overrides with dotted paths, e.g.
    /// `ttd.enabled=false` or `train.optimizer.lr=3e-4`.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut value = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (path, raw) = item
                .split_once('=')
                .ok_or_else(|| Error::config(format!("override `{item}` is not key=value")))?;
            set_path(&mut value, path, parse_scalar(raw))?;
        }
        let cfg: Config = serde_json::from_value(value)
            .map_err(|e| Error::config(format!("invalid override: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_scalar(raw: &str) -> serde_json::Value {
    if raw.eq_ignore_ascii_case("null") {
        return serde_json::Value::Null;
    }
    if let Ok(b) = raw.parse::<bool>() {
        return serde_json::Value::Bool(b);
    }
    if let Ok(n) = raw.parse::<u64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(n) = raw.parse::<i64>() {
        return serde_json::Value::Number(n.into());
    }
    if let Ok(f) = raw.parse::<f64>() {
        if let Some(n) = serde_json::Number::from_f64(f) {
            return serde_json::Value::Number(n);
        }
    }
    serde_json::Value::String(raw.to_string())
}

fn set_path(root: &mut serde_json::Value, path: &str, new: serde_json::Value) -> Result<()> {
    let mut cursor = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let map = cursor
            .as_object_mut()
            .ok_or_else(|| Error::config(format!("override path `{path}` does not name a field")))?;
        if i + 1 == parts.len() {
            let slot = map
                .get_mut(*part)
                .ok_or_else(|| Error::config(format!("unknown config key `{path}`")))?;
            *slot = new;
            return Ok(());
        }
        cursor = map
            .get_mut(*part)
            .ok_or_else(|| Error::config(format!("unknown config section `{part}` in `{path}`")))?;
    }
    Err(Error::config(format!("empty override path `{path}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn bits_per_token_matches_codebook() {
        let mut m = ModelConfig::default();
        assert_eq!(m.bits_per_token(), 12);
        m.codebook_size = 2;
        assert_eq!(m.bits_per_token(), 1);
        m.codebook_size = 1024;
        assert_eq!(m.bits_per_token(), 10);
        m.codebook_size = 1025;
        assert_eq!(m.bits_per_token(), 11);
    }

    #[test]
    fn rejects_indivisible_patch() {
        let mut m = ModelConfig::default();
        m.image_size = 31;
        assert!(matches!(m.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn overrides_take_precedence() {
        let cfg = Config::default();
        let out = cfg
            .with_overrides(&[
                "ttd.enabled=false".into(),
                "train.optimizer.lr=0.0003".into(),
                "model.n_latent_tokens=16".into(),
            ])
            .unwrap();
        assert!(!out.ttd.enabled);
        assert_eq!(out.train.optimizer.lr, 3e-4);
        assert_eq!(out.model.n_latent_tokens, 16);
    }

    #[test]
    fn unknown_override_key_is_rejected() {
        let cfg = Config::default();
        assert!(cfg.with_overrides(&["model.bogus=1".into()]).is_err());
        assert!(cfg.with_overrides(&["nonsense=1".into()]).is_err());
        assert!(cfg.with_overrides(&["model.image_size".into()]).is_err());
    }

    #[test]
    fn ttd_keys_match_documented_schema() {
        let cfg = Config::default();
        let v = serde_json::to_value(&cfg).unwrap();
        assert_eq!(v["ttd"]["enabled"], serde_json::Value::Bool(true));
        assert_eq!(v["ttd"]["granularity"], "per_batch");
    }
}
