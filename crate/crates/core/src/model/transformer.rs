//! Minimal pre-norm ViT blocks over a seeded parameter registry.

use candle_core::{DType, Device, Tensor, Var, D};
use candle_nn::{LayerNorm, Linear, Module};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::rng::truncated_normal;

const LN_EPS: f64 = 1e-6;
/// Additive attention bias for masked-out keys.
pub const MASK_BIAS: f32 = -1e9;

/// Ordered, named parameter registry. Iteration order is construction order;
/// checkpoint serialization sorts by name.
pub struct Params {
    device: Device,
    entries: Vec<(String, Var)>,
}

impl Params {
    pub fn new(device: Device) -> Self {
        Self { device, entries: Vec::new() }
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    fn register(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        let tensor = Tensor::from_vec(data, shape, &self.device)?;
        let var = Var::from_tensor(&tensor)?;
        let out = var.as_tensor().clone();
        self.entries.push((name.to_string(), var));
        Ok(out)
    }

    /// Truncated-normal initialized weight.
    pub fn weight(&mut self, name: &str, shape: &[usize], rng: &mut ChaCha8Rng, std: f32) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, truncated_normal(rng, std, n), shape)
    }

    pub fn zeros(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, vec![0.0; n], shape)
    }

    pub fn ones(&mut self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        self.register(name, vec![1.0; n], shape)
    }

    pub fn from_values(&mut self, name: &str, data: Vec<f32>, shape: &[usize]) -> Result<Tensor> {
        self.register(name, data, shape)
    }

    /// Trainable variables in construction order.
    pub fn vars(&self) -> Vec<Var> {
        self.entries.iter().map(|(_, v)| v.clone()).collect()
    }

    /// `(name, var)` pairs sorted by name.
    pub fn sorted(&self) -> Vec<(&str, &Var)> {
        let mut out: Vec<(&str, &Var)> = self.entries.iter().map(|(n, v)| (n.as_str(), v)).collect();
        out.sort_by(|a, b| a.0.cmp(b.0));
        out
    }

    pub fn get(&self, name: &str) -> Option<&Var> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }
}

/// Numerically stable softmax over the last dimension. The row max is
/// detached: it is constant with respect to the gradient.
pub fn softmax_last_dim(x: &Tensor) -> Result<Tensor> {
    let max = x.max_keepdim(D::Minus1)?.detach();
    let exp = x.broadcast_sub(&max)?.exp()?;
    let sum = exp.sum_keepdim(D::Minus1)?;
    Ok(exp.broadcast_div(&sum)?)
}

pub struct MultiHeadAttention {
    qkv: Linear,
    proj: Linear,
    heads: usize,
    head_dim: usize,
}

impl MultiHeadAttention {
    pub fn new(params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, width: usize, heads: usize) -> Result<Self> {
        let qkv_w = params.weight(&format!("{prefix}.qkv.w"), &[3 * width, width], rng, 0.02)?;
        let qkv_b = params.zeros(&format!("{prefix}.qkv.b"), &[3 * width])?;
        let proj_w = params.weight(&format!("{prefix}.proj.w"), &[width, width], rng, 0.02)?;
        let proj_b = params.zeros(&format!("{prefix}.proj.b"), &[width])?;
        Ok(Self {
            qkv: Linear::new(qkv_w, Some(qkv_b)),
            proj: Linear::new(proj_w, Some(proj_b)),
            heads,
            head_dim: width / heads,
        })
    }

    /// `x`: `[B, S, W]`; `key_bias`: optional additive bias `[B, 1, 1, S]`.
    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let (b, s, w) = x.dims3()?;
        let qkv = self.qkv.forward(x)?; // [B, S, 3W]
        let qkv = qkv.reshape((b, s, 3, self.heads, self.head_dim))?;
        let q = qkv.narrow(2, 0, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?; // [B, H, S, hd]
        let k = qkv.narrow(2, 1, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;
        let v = qkv.narrow(2, 2, 1)?.squeeze(2)?.transpose(1, 2)?.contiguous()?;

        let scale = 1.0 / (self.head_dim as f64).sqrt();
        let mut scores = (q.matmul(&k.transpose(2, 3)?.contiguous()?)? * scale)?; // [B, H, S, S]
        if let Some(bias) = key_bias {
            scores = scores.broadcast_add(bias)?;
        }
        let attn = softmax_last_dim(&scores)?;
        let out = attn.matmul(&v)?; // [B, H, S, hd]
        let out = out.transpose(1, 2)?.reshape((b, s, w))?;
        Ok(self.proj.forward(&out)?)
    }
}

struct Mlp {
    fc1: Linear,
    fc2: Linear,
}

impl Mlp {
    fn new(params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, width: usize) -> Result<Self> {
        let hidden = 4 * width;
        let fc1_w = params.weight(&format!("{prefix}.fc1.w"), &[hidden, width], rng, 0.02)?;
        let fc1_b = params.zeros(&format!("{prefix}.fc1.b"), &[hidden])?;
        let fc2_w = params.weight(&format!("{prefix}.fc2.w"), &[width, hidden], rng, 0.02)?;
        let fc2_b = params.zeros(&format!("{prefix}.fc2.b"), &[width])?;
        Ok(Self { fc1: Linear::new(fc1_w, Some(fc1_b)), fc2: Linear::new(fc2_w, Some(fc2_b)) })
    }

    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.fc2.forward(&self.fc1.forward(x)?.gelu()?)?)
    }
}

pub fn layer_norm(params: &mut Params, name: &str, width: usize) -> Result<LayerNorm> {
    let w = params.ones(&format!("{name}.w"), &[width])?;
    let b = params.zeros(&format!("{name}.b"), &[width])?;
    Ok(LayerNorm::new(w, b, LN_EPS))
}

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
pub struct Block {
    ln1: LayerNorm,
    attn: MultiHeadAttention,
    ln2: LayerNorm,
    mlp: Mlp,
}

impl Block {
    pub fn new(params: &mut Params, rng: &mut ChaCha8Rng, prefix: &str, width: usize, heads: usize) -> Result<Self> {
        Ok(Self {
            ln1: layer_norm(params, &format!("{prefix}.ln1"), width)?,
            attn: MultiHeadAttention::new(params, rng, &format!("{prefix}.attn"), width, heads)?,
            ln2: layer_norm(params, &format!("{prefix}.ln2"), width)?,
            mlp: Mlp::new(params, rng, &format!("{prefix}.mlp"), width)?,
        })
    }

    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let x = (x + self.attn.forward(&self.ln1.forward(x)?, key_bias)?)?;
        Ok((&x + self.mlp.forward(&self.ln2.forward(&x)?)?)?)
    }
}

/// Stack of blocks with a final layer norm.
pub struct Stack {
    blocks: Vec<Block>,
    ln_f: LayerNorm,
}

impl Stack {
    pub fn new(
        params: &mut Params,
        rng: &mut ChaCha8Rng,
        prefix: &str,
        width: usize,
        depth: usize,
        heads: usize,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(depth);
        for i in 0..depth {
            blocks.push(Block::new(params, rng, &format!("{prefix}.block{i}"), width, heads)?);
        }
        let ln_f = layer_norm(params, &format!("{prefix}.ln_f"), width)?;
        Ok(Self { blocks, ln_f })
    }

    pub fn forward(&self, x: &Tensor, key_bias: Option<&Tensor>) -> Result<Tensor> {
        let mut x = x.clone();
        for block in &self.blocks {
            x = block.forward(&x, key_bias)?;
        }
        Ok(self.ln_f.forward(&x)?)
    }
}

/// Key-padding bias: `[B, 1, 1, S]`, zero for visible keys, `MASK_BIAS` for
/// keys at or beyond each sample's visible length within `0..masked_span`.
/// Keys in `masked_span..s_total` (e.g. mask-token positions) stay visible.
pub fn key_padding_bias(
    lengths: &[usize],
    masked_span: usize,
    s_total: usize,
    device: &Device,
) -> Result<Tensor> {
    let b = lengths.len();
    let mut bias = vec![0f32; b * s_total];
    for (i, &len) in lengths.iter().enumerate() {
        for j in len..masked_span {
            bias[i * s_total + j] = MASK_BIAS;
        }
    }
    Ok(Tensor::from_vec(bias, (b, 1, 1, s_total), device)?.to_dtype(DType::F32)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn softmax_rows_sum_to_one() {
        let dev = Device::Cpu;
        let x = Tensor::from_vec(vec![0.0f32, 1.0, 2.0, -1.0, 0.5, 0.0], (2, 3), &dev).unwrap();
        let s = softmax_last_dim(&x).unwrap();
        let sums = s.sum(D::Minus1).unwrap().to_vec1::<f32>().unwrap();
        for v in sums {
            assert!((v - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn block_preserves_shape() {
        let mut params = Params::new(Device::Cpu);
        let mut rng = rng_from_seed(0);
        let block = Block::new(&mut params, &mut rng, "t", 32, 4).unwrap();
        let x = Tensor::zeros((2, 5, 32), DType::F32, params.device()).unwrap();
        let y = block.forward(&x, None).unwrap();
        assert_eq!(y.dims(), &[2, 5, 32]);
    }

    #[test]
    fn masked_keys_get_no_attention() {
        let dev = Device::Cpu;
        let bias = key_padding_bias(&[2, 4], 4, 6, &dev).unwrap();
        assert_eq!(bias.dims(), &[2, 1, 1, 6]);
        let v = bias.flatten_all().unwrap().to_vec1::<f32>().unwrap();
        // sample 0: latent keys 2,3 masked; mask-token keys 4,5 visible
        assert_eq!(v[0], 0.0);
        assert_eq!(v[2], MASK_BIAS);
        assert_eq!(v[3], MASK_BIAS);
        assert_eq!(v[4], 0.0);
        // sample 1: nothing masked
        assert!(v[6..].iter().all(|&x| x == 0.0));
    }

    #[test]
    fn params_sorted_by_name() {
        let mut params = Params::new(Device::Cpu);
        let mut rng = rng_from_seed(0);
        params.weight("b.w", &[2, 2], &mut rng, 0.02).unwrap();
        params.weight("a.w", &[2, 2], &mut rng, 0.02).unwrap();
        let names: Vec<&str> = params.sorted().iter().map(|(n, _)| *n).collect();
        assert_eq!(names, vec!["a.w", "b.w"]);
    }
}
