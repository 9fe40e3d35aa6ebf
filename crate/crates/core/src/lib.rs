//! Variable-length 1D image tokenizer, bit-exact token-stream codec, and the
//! training/evaluation toolkit around them.
//!
//! The tokenizer maps an image to a fixed-length sequence of discrete token
//! ids whose prefixes decode to progressively better reconstructions; tail
//! token drop during training concentrates information at the head of the
//! sequence, which is what makes reader-side truncation useful.

pub mod analysis;
pub mod checkpoint;
pub mod codec;
pub mod config;
pub mod error;
pub mod image;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod synth;
pub mod tokens;
pub mod train;
pub mod ttd;

pub use config::{Config, DropGranularity, ModelConfig, TrainConfig, TtdConfig};
pub use error::{Error, Result};
pub use image::ImageTensor;
pub use model::{Codebook, LatentSequence, TokenizerModel};
pub use tokens::TokenSequence;
pub use ttd::DropPolicy;
