//! The encoder -> quantizer -> decoder pipeline.
//!
//! A ViT encoder consumes image patches together with `N` learnable latent
//! tokens; its outputs at the latent positions form the continuous latent
//! sequence, which is discretized against a codebook. The decoder consumes
//! the quantized tokens of any prefix length alongside one learned mask
//! token replicated per output patch, and a small CNN upscales the mask
//! outputs back into pixels.

pub mod quantizer;
pub mod transformer;

use candle_core::{Device, Tensor};
use candle_nn::{Linear, Module};
use sha2::{Digest, Sha256};

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::tokens::TokenSequence;
use crate::ImageTensor;

pub use quantizer::{straight_through, Codebook};
use transformer::{key_padding_bias, Params, Stack};

/// Continuous per-token embeddings produced by the encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSequence {
    len: usize,
    dim: usize,
    values: Vec<f32>,
}

impl LatentSequence {
    pub fn new(len: usize, dim: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != len * dim {
            return Err(Error::invalid_input("latent buffer does not match len * dim"));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("latent sequence contains non-finite values".into()));
        }
        Ok(Self { len, dim, values })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.dim..(i + 1) * self.dim]
    }
}

/// A trainable image tokenizer: weights, codebook, and geometry.
pub struct TokenizerModel {
    config: ModelConfig,
    device: Device,
    params: Params,

    patch_w: Tensor,
    patch_b: Tensor,
    pos_patch: Tensor,
    latent_tokens: Tensor,
    encoder: Stack,
    enc_head: Linear,

    dec_embed: Linear,
    pos_latent: Tensor,
    mask_token: Tensor,
    pos_mask: Tensor,
    decoder: Stack,
    up1_w: Tensor,
    up1_b: Tensor,
    up2_w: Tensor,
    up2_b: Tensor,

    codebook: Codebook,
}

impl TokenizerModel {
    /// Build a freshly initialized model. All weights derive from
    /// `weight_seed` alone, so the same seed yields bit-identical models.
    pub fn new(config: &ModelConfig, weight_seed: u64) -> Result<Self> {
        config.validate()?;
        let device = Device::Cpu;
        let mut params = Params::new(device.clone());
        let mut rng = rng::rng_from_seed(weight_seed);

        let c = config.channels;
        let p = config.patch_size;
        let g = config.grid_size();
        let n_patches = config.n_patches();
        let n = config.n_latent_tokens;
        let d = config.token_dim;
        let ew = config.encoder_width;
        let dw = config.decoder_width;
        let uc = config.upscaler_channels;

        let patch_w = params.weight("enc.patch.w", &[ew, c, p, p], &mut rng, 0.02)?;
        let patch_b = params.zeros("enc.patch.b", &[ew])?;
        let pos_patch = params.weight("enc.pos_patch", &[n_patches, ew], &mut rng, 0.02)?;
        let latent_tokens = params.weight("enc.latent_tokens", &[n, ew], &mut rng, 0.02)?;
        let encoder = Stack::new(&mut params, &mut rng, "enc", ew, config.encoder_depth, config.encoder_heads)?;
        let head_w = params.weight("enc.head.w", &[d, ew], &mut rng, 0.02)?;
        let head_b = params.zeros("enc.head.b", &[d])?;
        let enc_head = Linear::new(head_w, Some(head_b));

        let embed_w = params.weight("dec.embed.w", &[dw, d], &mut rng, 0.02)?;
        let embed_b = params.zeros("dec.embed.b", &[dw])?;
        let dec_embed = Linear::new(embed_w, Some(embed_b));
        let pos_latent = params.weight("dec.pos_latent", &[n, dw], &mut rng, 0.02)?;
        let mask_token = params.weight("dec.mask_token", &[dw], &mut rng, 0.02)?;
        let pos_mask = params.weight("dec.pos_mask", &[n_patches, dw], &mut rng, 0.02)?;
        let decoder = Stack::new(&mut params, &mut rng, "dec", dw, config.decoder_depth, config.decoder_heads)?;

        let up1_w = params.weight("up.conv1.w", &[uc, dw, 3, 3], &mut rng, 0.02)?;
        let up1_b = params.zeros("up.conv1.b", &[uc])?;
        let up2_w = params.weight("up.conv2.w", &[c * p * p, uc, 3, 3], &mut rng, 0.02)?;
        let up2_b = params.zeros("up.conv2.b", &[c * p * p])?;

        let codebook = Codebook::init(&mut params, &mut rng, config.codebook_size, d)?;

        let _ = g;
        Ok(Self {
            config: config.clone(),
            device,
            params,
            patch_w,
            patch_b,
            pos_patch,
            latent_tokens,
            encoder,
            enc_head,
            dec_embed,
            pos_latent,
            mask_token,
            pos_mask,
            decoder,
            up1_w,
            up1_b,
            up2_w,
            up2_b,
            codebook,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn codebook(&self) -> &Codebook {
        &self.codebook
    }

    pub fn codebook_mut(&mut self) -> &mut Codebook {
        &mut self.codebook
    }

    fn check_image(&self, image: &ImageTensor) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s || image.channels() != self.config.channels {
            return Err(Error::invalid_input(format!(
                "image is {}x{}x{}, model expects {}x{}x{}",
                image.height(),
                image.width(),
                image.channels(),
                s,
                s,
                self.config.channels
            )));
        }
        Ok(())
    }

    /// Encoder forward over a `[B, C, H, W]` batch; returns `[B, N, d]`.
    pub fn encode_batch(&self, images: &Tensor) -> Result<Tensor> {
        let (b, c, h, w) = images.dims4()?;
        let s = self.config.image_size;
        if c != self.config.channels || h != s || w != s {
            return Err(Error::invalid_input(format!(
                "batch is [{b}, {c}, {h}, {w}], model expects [{b}, {}, {s}, {s}]",
                self.config.channels
            )));
        }
        let p = self.config.patch_size;
        let n_patches = self.config.n_patches();
        let n = self.config.n_latent_tokens;
        let ew = self.config.encoder_width;

        let patches = images.conv2d(&self.patch_w, 0, p, 1, 1)?; // [B, ew, g, g]
        let patches = patches.broadcast_add(&self.patch_b.reshape((ew, 1, 1))?)?;
        let patches = patches.flatten_from(2)?.transpose(1, 2)?; // [B, P, ew]
        let patches = patches.broadcast_add(&self.pos_patch)?;

        let latents = self.latent_tokens.unsqueeze(0)?.expand((b, n, ew))?;
        let x = Tensor::cat(&[&patches, &latents], 1)?; // [B, P+N, ew]

        let out = self.encoder.forward(&x, None)?;
        let latent_out = out.narrow(1, n_patches, n)?;
        Ok(self.enc_head.forward(&latent_out)?)
    }

    /// Encode one image to its continuous latent sequence.
    pub fn encode(&self, image: &ImageTensor) -> Result<LatentSequence> {
        self.check_image(image)?;
        let batch = image.to_chw_tensor(&self.device)?.unsqueeze(0)?;
        let z = self.encode_batch(&batch)?;
        let values = z.flatten_all()?.to_vec1::<f32>()?;
        LatentSequence::new(self.config.n_latent_tokens, self.config.token_dim, values)
            .map_err(|_| Error::Numeric("encoder produced non-finite activations".into()))
    }

    /// Full-length token sequence for one image: `quantize(encode(image))`.
    pub fn tokenize(&self, image: &ImageTensor) -> Result<TokenSequence> {
        let z = self.encode(image)?;
        let (tokens, _) = self.codebook.quantize(&z)?;
        Ok(tokens)
    }

    /// Token sequences for a batch of images.
    pub fn tokenize_batch(&self, images: &[ImageTensor]) -> Result<Vec<TokenSequence>> {
        for img in images {
            self.check_image(img)?;
        }
        let batch = ImageTensor::batch_to_tensor(images, &self.device)?;
        let z = self.encode_batch(&batch)?;
        let flat = z.flatten_all()?.to_vec1::<f32>()?;
        if !flat.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric("encoder produced non-finite activations".into()));
        }
        let ids = self.codebook.nearest_ids(&flat)?;
        let n = self.config.n_latent_tokens;
        ids.chunks(n).map(|chunk| TokenSequence::new(chunk.to_vec())).collect()
    }

    /// Decoder forward from quantized embeddings `[B, L, d]` to raw
    /// (unclamped) images `[B, C, H, W]`. With `lengths`, sample `i` only
    /// sees its first `lengths[i]` tokens; padded positions are hidden from
    /// attention.
    pub fn decode_embeddings(&self, embeddings: &Tensor, lengths: Option<&[usize]>) -> Result<Tensor> {
        let (b, l, d) = embeddings.dims3()?;
        let n = self.config.n_latent_tokens;
        if d != self.config.token_dim {
            return Err(Error::invalid_input("embedding dim does not match token_dim"));
        }
        if l == 0 || l > n {
            return Err(Error::invalid_input(format!("sequence length {l} out of range 1..={n}")));
        }
        if let Some(lens) = lengths {
            if lens.len() != b {
                return Err(Error::invalid_input("one length per sample required"));
            }
            if lens.iter().any(|&x| x == 0 || x > l) {
                return Err(Error::invalid_input("per-sample length out of range"));
            }
        }
        let dw = self.config.decoder_width;
        let n_patches = self.config.n_patches();
        let g = self.config.grid_size();
        let p = self.config.patch_size;
        let c = self.config.channels;

        // Truncated sequences keep their original positional indices 1..L.
        let tok = self.dec_embed.forward(embeddings)?; // [B, L, dw]
        let tok = tok.broadcast_add(&self.pos_latent.narrow(0, 0, l)?)?;

        let masks = self
            .mask_token
            .reshape((1, 1, dw))?
            .expand((b, n_patches, dw))?
            .broadcast_add(&self.pos_mask)?;
        let x = Tensor::cat(&[&tok, &masks], 1)?; // [B, L+P, dw]

        let bias = match lengths {
            Some(lens) if lens.iter().any(|&x| x < l) => {
                Some(key_padding_bias(lens, l, l + n_patches, &self.device)?)
            }
            _ => None,
        };
        let out = self.decoder.forward(&x, bias.as_ref())?;
        let mask_out = out.narrow(1, l, n_patches)?; // [B, P, dw]

        let grid = mask_out.transpose(1, 2)?.reshape((b, dw, g, g))?.contiguous()?;
        let hidden = grid.conv2d(&self.up1_w, 1, 1, 1, 1)?;
        let hidden = hidden
            .broadcast_add(&self.up1_b.reshape((self.up1_b.dim(0)?, 1, 1))?)?
            .gelu()?;
        let pixels = hidden.conv2d(&self.up2_w, 1, 1, 1, 1)?;
        let pixels = pixels.broadcast_add(&self.up2_b.reshape((c * p * p, 1, 1))?)?;
        pixel_shuffle(&pixels, c, p)
    }

    fn decode_core(&self, tokens: &TokenSequence) -> Result<Tensor> {
        tokens.validate(self.config.codebook_size, self.config.n_latent_tokens)?;
        let e = self.codebook.embed_ids(tokens.ids(), &self.device)?;
        let e = e.reshape((1, tokens.len(), self.config.token_dim))?;
        self.decode_embeddings(&e, None)
    }

    /// Reconstruct an image from a token sequence of any admissible length.
    /// Output values are clamped to `[0, 1]`.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<ImageTensor> {
        let raw = self.decode_core(tokens)?;
        ImageTensor::from_chw_tensor(&raw.squeeze(0)?)
    }

    /// Alias of [`decode`] used at the file boundary.
    pub fn detokenize(&self, tokens: &TokenSequence) -> Result<ImageTensor> {
        self.decode(tokens)
    }

    /// Decode a batch of equal-length sequences.
    pub fn decode_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<ImageTensor>> {
        if sequences.is_empty() {
            return Err(Error::invalid_input("cannot decode an empty batch"));
        }
        let l = sequences[0].len();
        let mut ids = Vec::with_capacity(sequences.len() * l);
        for s in sequences {
            if s.len() != l {
                return Err(Error::invalid_input("decode_batch requires equal-length sequences"));
            }
            s.validate(self.config.codebook_size, self.config.n_latent_tokens)?;
            ids.extend_from_slice(s.ids());
        }
        let e = self.codebook.embed_ids(&ids, &self.device)?;
        let e = e.reshape((sequences.len(), l, self.config.token_dim))?;
        let raw = self.decode_embeddings(&e, None)?;
        (0..sequences.len())
            .map(|i| ImageTensor::from_chw_tensor(&raw.narrow(0, i, 1)?.squeeze(0)?))
            .collect()
    }

    /// Mean-pooled encoder latent outputs, one `token_dim` feature vector
    /// per image. Used as the frozen-encoder representation for linear
    /// probing and as the default Fréchet feature extractor.
    pub fn pooled_latent_features(&self, images: &[ImageTensor], chunk: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(images.len());
        for batch in images.chunks(chunk.max(1)) {
            for img in batch {
                self.check_image(img)?;
            }
            let t = ImageTensor::batch_to_tensor(batch, &self.device)?;
            let z = self.encode_batch(&t)?; // [B, N, d]
            let pooled = z.mean(1)?; // [B, d]
            let rows = pooled.to_vec2::<f32>()?;
            for row in rows {
                if !row.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric("encoder produced non-finite features".into()));
                }
                out.push(row.into_iter().map(|v| v as f64).collect());
            }
        }
        Ok(out)
    }

    /// 8-byte fingerprint over all weights (sorted by name).
    pub fn fingerprint(&self) -> [u8; 8] {
        let mut hasher = Sha256::new();
        for (name, var) in self.params.sorted() {
            hasher.update(name.as_bytes());
            let t = var.as_tensor();
            for d in t.dims() {
                hasher.update((*d as u64).to_le_bytes());
            }
            let flat = t
                .flatten_all()
                .and_then(|f| f.to_vec1::<f32>())
                .expect("weights are f32 tensors");
            for v in flat {
                hasher.update(v.to_le_bytes());
            }
        }
        let digest = hasher.finalize();
        digest[..8].try_into().unwrap()
    }
}

/// Depth-to-space: `[B, C*p*p, g, g]` -> `[B, C, g*p, g*p]`, channel index
/// `c*p*p + dy*p + dx`.
fn pixel_shuffle(x: &Tensor, channels: usize, p: usize) -> Result<Tensor> {
    let (b, cpp, g, _) = x.dims4()?;
    debug_assert_eq!(cpp, channels * p * p);
    let x = x.reshape((b, channels, p, p, g, g))?;
    let x = x.permute((0, 1, 4, 2, 5, 3))?.contiguous()?;
    Ok(x.reshape((b, channels, g * p, g * p))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            image_size: 16,
            channels: 3,
            patch_size: 4,
            n_latent_tokens: 8,
            codebook_size: 32,
            token_dim: 4,
            encoder_width: 32,
            encoder_depth: 2,
            encoder_heads: 4,
            decoder_width: 32,
            decoder_depth: 2,
            decoder_heads: 4,
            upscaler_channels: 16,
        }
    }

    fn gradient_image(size: usize) -> ImageTensor {
        let mut img = ImageTensor::zeros(size, size, 3);
        for y in 0..size {
            for x in 0..size {
                img.set(y, x, 0, x as f32 / size as f32);
                img.set(y, x, 1, y as f32 / size as f32);
                img.set(y, x, 2, 0.5);
            }
        }
        img
    }

    #[test]
    fn encode_produces_n_latents() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let z = model.encode(&gradient_image(16)).unwrap();
        assert_eq!(z.len(), 8);
        assert_eq!(z.dim(), 4);
    }

    #[test]
    fn encode_is_deterministic() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let img = gradient_image(16);
        let a = model.encode(&img).unwrap();
        let b = model.encode(&img).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn same_seed_same_weights() {
        let cfg = tiny_config();
        let a = TokenizerModel::new(&cfg, 7).unwrap();
        let b = TokenizerModel::new(&cfg, 7).unwrap();
        assert_eq!(a.fingerprint(), b.fingerprint());
        let c = TokenizerModel::new(&cfg, 8).unwrap();
        assert_ne!(a.fingerprint(), c.fingerprint());
    }

    #[test]
    fn wrong_image_size_rejected() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let img = gradient_image(15);
        assert!(matches!(model.encode(&img), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn tokenize_emits_full_length() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let q = model.tokenize(&gradient_image(16)).unwrap();
        assert_eq!(q.len(), 8);
        assert!(q.ids().iter().all(|&id| id < 32));
        // Repeatable.
        let q2 = model.tokenize(&gradient_image(16)).unwrap();
        assert_eq!(q, q2);
    }

    #[test]
    fn tokenize_batch_matches_single() {
        let model = TokenizerModel::new(&tiny_config(), 3).unwrap();
        let a = gradient_image(16);
        let b = gradient_image(16).flip_horizontal();
        let batch = model.tokenize_batch(&[a.clone(), b.clone()]).unwrap();
        assert_eq!(batch[0], model.tokenize(&a).unwrap());
        assert_eq!(batch[1], model.tokenize(&b).unwrap());
    }

    #[test]
    fn decode_accepts_every_prefix_length() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let q = model.tokenize(&gradient_image(16)).unwrap();
        for len in 1..=8 {
            let img = model.decode(&q.prefix(len).unwrap()).unwrap();
            assert_eq!(img.height(), 16);
            assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn decode_rejects_bad_tokens() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let too_long = TokenSequence::new(vec![0; 9]).unwrap();
        assert!(matches!(model.decode(&too_long), Err(Error::InvalidInput(_))));
        let bad_id = TokenSequence::new(vec![32]).unwrap();
        assert!(matches!(model.decode(&bad_id), Err(Error::InvalidToken { .. })));
    }

    #[test]
    fn truncation_never_re_encodes() {
        let model = TokenizerModel::new(&tiny_config(), 0).unwrap();
        let q = model.tokenize(&gradient_image(16)).unwrap();
        let head = q.prefix(3).unwrap();
        assert_eq!(&q.ids()[..3], head.ids());
    }

    #[test]
    fn masked_batch_decode_matches_single_prefix_decode() {
        // Per-sample masking must reproduce plain shortened-sequence decoding.
        let model = TokenizerModel::new(&tiny_config(), 1).unwrap();
        let q = model.tokenize(&gradient_image(16)).unwrap();
        let d = model.config().token_dim;

        let short = q.prefix(3).unwrap();
        let single = model.decode(&short).unwrap();

        // Batch of two: lengths 3 and 8, padded to 8.
        let e_full = model.codebook.embed_ids(q.ids(), model.device()).unwrap();
        let e_full = e_full.reshape((1, 8, d)).unwrap();
        let e_pad = {
            let head = model.codebook.embed_ids(short.ids(), model.device()).unwrap();
            let zeros = Tensor::zeros((5, d), candle_core::DType::F32, model.device()).unwrap();
            Tensor::cat(&[&head, &zeros], 0).unwrap().reshape((1, 8, d)).unwrap()
        };
        let batch = Tensor::cat(&[&e_pad, &e_full], 0).unwrap();
        let raw = model.decode_embeddings(&batch, Some(&[3, 8])).unwrap();
        let masked = ImageTensor::from_chw_tensor(&raw.narrow(0, 0, 1).unwrap().squeeze(0).unwrap()).unwrap();

        let diff = masked.mean_abs_diff(&single).unwrap();
        assert!(diff < 1e-5, "masked decode differs from shortened decode by {diff}");
    }

    #[test]
    fn pixel_shuffle_layout() {
        let dev = Device::Cpu;
        // 1 channel, p=2, g=1: channels [c0: dy0dx0, dy0dx1, dy1dx0, dy1dx1]
        let x = Tensor::from_vec(vec![1.0f32, 2.0, 3.0, 4.0], (1, 4, 1, 1), &dev).unwrap();
        let y = pixel_shuffle(&x, 1, 2).unwrap();
        assert_eq!(y.dims(), &[1, 1, 2, 2]);
        let v = y.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert_eq!(v, vec![1.0, 2.0, 3.0, 4.0]);
    }
}
