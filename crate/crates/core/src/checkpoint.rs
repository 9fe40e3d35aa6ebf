//! Single-file checkpoint archive.
//!
//! A checkpoint is one safetensors file holding every weight tensor (sorted
//! by name), the codebook usage counters, and one metadata entry with the
//! full config, training step, and RNG seed provenance as canonical JSON.
//! Serialization is deterministic: save -> load -> save reproduces the file
//! byte for byte.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::TokenizerModel;
use crate::rng::derive_seed;

pub const SCHEMA_VERSION: u32 = 1;
const META_KEY: &str = "meta";
const USAGE_TENSOR: &str = "quant.usage";

/// Seeds for each independent RNG stream, derived from the master seed.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedInfo {
    pub master: u64,
    pub weights: u64,
    pub data: u64,
    pub ttd: u64,
}

impl SeedInfo {
    pub fn from_master(master: u64, ttd_override: Option<u64>) -> Self {
        Self {
            master,
            weights: derive_seed(master, "weights"),
            data: derive_seed(master, "data"),
            ttd: ttd_override.unwrap_or_else(|| derive_seed(master, "ttd")),
        }
    }
}

/// Versioned metadata stored inside the checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema_version: u32,
    pub config: Config,
    pub step: usize,
    pub seeds: SeedInfo,
}

impl CheckpointMeta {
    pub fn new(config: &Config, step: usize) -> Self {
        let seeds = SeedInfo::from_master(config.train.seed, config.ttd.seed);
        Self { schema_version: SCHEMA_VERSION, config: config.clone(), step, seeds }
    }
}

fn checkpoint_err(path: &Path, reason: impl std::fmt::Display) -> Error {
    Error::Checkpoint { path: path.to_path_buf(), reason: reason.to_string() }
}

/// Write `model` and `meta` to `path` atomically (temp file + rename).
pub fn save(model: &TokenizerModel, meta: &CheckpointMeta, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = to_bytes(model, meta).map_err(|e| checkpoint_err(path, e))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// Serialize to the on-disk byte format without touching the filesystem.
pub fn to_bytes(model: &TokenizerModel, meta: &CheckpointMeta) -> Result<Vec<u8>> {
    // Owned buffers first; TensorViews borrow them during serialization.
    let mut buffers: Vec<(String, Vec<usize>, Dtype, Vec<u8>)> = Vec::new();
    for (name, var) in model.params().sorted() {
        let t = var.as_tensor();
        let values = t.flatten_all()?.to_vec1::<f32>()?;
        let mut raw = Vec::with_capacity(values.len() * 4);
        for v in &values {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        buffers.push((name.to_string(), t.dims().to_vec(), Dtype::F32, raw));
    }
    let usage = model.codebook().usage_counts();
    let mut usage_raw = Vec::with_capacity(usage.len() * 8);
    for v in usage {
        usage_raw.extend_from_slice(&v.to_le_bytes());
    }
    buffers.push((USAGE_TENSOR.to_string(), vec![usage.len()], Dtype::U64, usage_raw));

    let views: Vec<(String, TensorView)> = buffers
        .iter()
        .map(|(name, shape, dtype, raw)| {
            TensorView::new(*dtype, shape.clone(), raw)
                .map(|v| (name.clone(), v))
                .map_err(|e| Error::config(format!("cannot build tensor view for {name}: {e:?}")))
        })
        .collect::<Result<_>>()?;

    // A single metadata key keeps the header JSON deterministic.
    let meta_json = serde_json::to_string(meta).expect("metadata serializes");
    let mut data_info = HashMap::new();
    data_info.insert(META_KEY.to_string(), meta_json);

    safetensors::serialize(views, Some(data_info))
        .map_err(|e| Error::config(format!("checkpoint serialization failed: {e:?}")))
}

/// Load a checkpoint into a freshly built model.
pub fn load(path: impl AsRef<Path>) -> Result<(TokenizerModel, CheckpointMeta)> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| checkpoint_err(path, e))?;
    from_bytes(&bytes).map_err(|e| match e {
        Error::Checkpoint { reason, .. } => checkpoint_err(path, reason),
        other => checkpoint_err(path, other),
    })
}

fn from_bytes(bytes: &[u8]) -> Result<(TokenizerModel, CheckpointMeta)> {
    let bad = |reason: String| Error::Checkpoint { path: PathBuf::new(), reason };

    let (_, header) = SafeTensors::read_metadata(bytes).map_err(|e| bad(format!("bad header: {e:?}")))?;
    let meta_json = header
        .metadata()
        .as_ref()
        .and_then(|m| m.get(META_KEY))
        .ok_or_else(|| bad("missing metadata entry".into()))?;
    let meta: CheckpointMeta =
        serde_json::from_str(meta_json).map_err(|e| bad(format!("bad metadata JSON: {e}")))?;
    if meta.schema_version != SCHEMA_VERSION {
        return Err(bad(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            meta.schema_version
        )));
    }
    meta.config.validate()?;

    let tensors = SafeTensors::deserialize(bytes).map_err(|e| bad(format!("bad tensor data: {e:?}")))?;
    let mut model = TokenizerModel::new(&meta.config.model, meta.seeds.weights)?;

    let mut expected: Vec<String> = model.params().sorted().iter().map(|(n, _)| n.to_string()).collect();
    expected.push(USAGE_TENSOR.to_string());
    let mut found: Vec<String> = tensors.names().iter().map(|s| s.to_string()).collect();
    expected.sort();
    found.sort();
    if expected != found {
        return Err(bad(format!(
            "weight names do not match the model: expected {} tensors, found {}",
            expected.len(),
            found.len()
        )));
    }

    for (name, var) in model.params().sorted() {
        let view = tensors.tensor(name).map_err(|e| bad(format!("missing tensor {name}: {e:?}")))?;
        if view.dtype() != Dtype::F32 {
            return Err(bad(format!("tensor {name} has dtype {:?}, expected F32", view.dtype())));
        }
        let raw = view.data();
        let mut values = Vec::with_capacity(raw.len() / 4);
        for chunk in raw.chunks_exact(4) {
            values.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let t = candle_core::Tensor::from_vec(values, view.shape().to_vec(), var.device())?;
        var.set(&t).map_err(|e| bad(format!("tensor {name} shape mismatch: {e}")))?;
    }

    let usage_view = tensors
        .tensor(USAGE_TENSOR)
        .map_err(|e| bad(format!("missing usage counters: {e:?}")))?;
    if usage_view.dtype() != Dtype::U64 {
        return Err(bad("usage counters have the wrong dtype".into()));
    }
    let usage: Vec<u64> = usage_view
        .data()
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    model.codebook_mut().set_usage(usage)?;

    Ok((model, meta))
}
