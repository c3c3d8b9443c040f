//! Minimal decoder-only transformer with an explicit KV cache.
//!
//! Pre-norm blocks, RMS-norm with `(1 + gain)` scaling, rotary position
//! embeddings on q/k by absolute position, plain SiLU MLP, and an output
//! projection tied to the token embedding.

mod cache;
mod logits;
mod forward;
mod io;

pub use cache::KvCache;
pub use logits::Logits;
pub use forward::{forward, ROPE_BASE};
pub use io::{load_weights, save_weights, read_weights, write_weights, FORMAT_VERSION, MAGIC};

use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::XorShift64Star;
use crate::tokenizer;

/// Half-width of the uniform distribution used by [`ModelWeights::init`].
pub const INIT_RANGE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("context overflow: {needed} positions needed, max_context is {max_context}")]
    ContextOverflow { needed: usize, max_context: usize },
    #[error("token id {id} out of range for vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },
    #[error("forward called with no tokens")]
    EmptyInput,
    #[error("cannot truncate cache of length {len} to {requested}")]
    TruncateBeyondLength { len: usize, requested: usize },
    #[error("bad magic {found:?}, expected \"MTIW\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported weight format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("weight file truncated: expected {expected} bytes, found {found}")]
    TruncatedFile { expected: usize, found: usize },
    #[error("weight shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("weights contain a non-finite value in {tensor}")]
    NonFinite { tensor: &'static str },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub max_context: usize,
    pub norm_eps: f32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            vocab_size: tokenizer::VOCAB_SIZE,
            dim: 64,
            n_layers: 2,
            n_heads: 4,
            max_context: 512,
            norm_eps: 1e-5,
        }
    }
}

impl ModelConfig {
    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.dim
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: String| Err(ModelError::InvalidConfig(msg));
        if self.vocab_size < 3 {
            return bad(format!("vocab_size {} < 3", self.vocab_size));
        }
        if self.n_heads == 0 || self.dim == 0 || !self.dim.is_multiple_of(self.n_heads) {
            return bad(format!("dim {} not divisible by n_heads {}", self.dim, self.n_heads));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!("head_dim {} must be even for rotary embeddings", self.head_dim()));
        }
        if self.max_context == 0 {
            return bad("max_context must be at least 1".into());
        }
        if !(self.norm_eps.is_finite() && self.norm_eps > 0.0) {
            return bad(format!("norm_eps {} must be positive", self.norm_eps));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    /// `dim x dim`, row-major, applied as `x @ W`.
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    /// `dim x 4dim`.
    pub w_up: Vec<f32>,
    /// `4dim x dim`.
    pub w_down: Vec<f32>,
    pub attn_norm: Vec<f32>,
    pub mlp_norm: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `vocab_size x dim`, row-major. Also the transposed output projection.
    pub token_embedding: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub final_norm: Vec<f32>,
}

impl ModelWeights {
    /// Seeded initialisation. Tensors are filled in this order, which is
    /// also the on-disk order: embedding, then per layer
    /// `wq, wk, wv, wo, w_up, w_down, attn_norm, mlp_norm`, then the final
    /// norm. Every entry is uniform in `[-0.05, 0.05]`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = XorShift64Star::from_seed(seed);
        let mut weights = Self::zeros(config);
        weights.visit_mut(|_, tensor| {
            for v in tensor.iter_mut() {
                *v = rng.next_symmetric(INIT_RANGE);
            }
        });
        Ok(weights)
    }

    pub(crate) fn zeros(config: ModelConfig) -> Self {
        let d = config.dim;
        let h = config.hidden_dim();
        let layer = LayerWeights {
            wq: vec![0.0; d * d],
            wk: vec![0.0; d * d],
            wv: vec![0.0; d * d],
            wo: vec![0.0; d * d],
            w_up: vec![0.0; d * h],
            w_down: vec![0.0; h * d],
            attn_norm: vec![0.0; d],
            mlp_norm: vec![0.0; d],
        };
        Self {
            config,
            token_embedding: vec![0.0; config.vocab_size * d],
            layers: vec![layer; config.n_layers],
            final_norm: vec![0.0; d],
        }
    }

    /// Visits every tensor in fill order.
    pub fn visit(&self, mut f: impl FnMut(&'static str, &[f32])) {
        f("token_embedding", &self.token_embedding);
        for l in &self.layers {
            f("wq", &l.wq);
            f("wk", &l.wk);
            f("wv", &l.wv);
            f("wo", &l.wo);
            f("w_up", &l.w_up);
            f("w_down", &l.w_down);
            f("attn_norm", &l.attn_norm);
            f("mlp_norm", &l.mlp_norm);
        }
        f("final_norm", &self.final_norm);
    }

    pub fn visit_mut(&mut self, mut f: impl FnMut(&'static str, &mut [f32])) {
        f("token_embedding", &mut self.token_embedding);
        for l in &mut self.layers {
            f("wq", &mut l.wq);
            f("wk", &mut l.wk);
            f("wv", &mut l.wv);
            f("wo", &mut l.wo);
            f("w_up", &mut l.w_up);
            f("w_down", &mut l.w_down);
            f("attn_norm", &mut l.attn_norm);
            f("mlp_norm", &mut l.mlp_norm);
        }
        f("final_norm", &mut self.final_norm);
    }

    /// Multiplies the token embedding, and with it the tied output
    /// projection, by `factor`. Seeded weights give near-uniform
    /// next-token distributions; a factor around 5 spreads token entropies
    /// over roughly 0.5..3 nats.
    pub fn scale_embedding(&mut self, factor: f32) {
        for v in &mut self.token_embedding {
            *v *= factor;
        }
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    /// Bitwise equality, distinguishing `0.0` from `-0.0`.
    pub fn bits_eq(&self, other: &Self) -> bool {
        if self.config != other.config {
            return false;
        }
        let mut a = Vec::new();
        let mut b = Vec::new();
        self.visit(|_, t| a.extend(t.iter().map(|v| v.to_bits())));
        other.visit(|_, t| b.extend(t.iter().map(|v| v.to_bits())));
        a == b
    }

    pub fn check(&self) -> Result<(), ModelError> {
        self.config.validate()?;
        let reference = Self::zeros(self.config);
        let mut shapes = Vec::new();
        reference.visit(|name, t| shapes.push((name, t.len())));
        if self.layers.len() != self.config.n_layers {
            return Err(ModelError::ShapeMismatch(format!(
                "{} layers, config says {}",
                self.layers.len(),
                self.config.n_layers
            )));
        }
        let mut err = None;
        let mut idx = 0;
        self.visit(|name, t| {
            if err.is_some() {
                return;
            }
            let (_, expected) = shapes[idx];
            idx += 1;
            if t.len() != expected {
                err = Some(ModelError::ShapeMismatch(format!(
                    "{name} has {} entries, expected {expected}",
                    t.len()
                )));
            } else if t.iter().any(|v| !v.is_finite()) {
                err = Some(ModelError::NonFinite { tensor: name });
            }
        });
        err.map_or(Ok(()), Err)
    }
}

/// Configuration plus weights plus a content hash identifying the model.
#[derive(Debug, Clone)]
pub struct ModelBundle {
    pub weights: ModelWeights,
    hash: String,
}

impl ModelBundle {
    pub fn new(weights: ModelWeights) -> Result<Self, ModelError> {
        weights.check()?;
        let mut bytes = Vec::new();
        write_weights(&weights, &mut bytes)?;
        let digest = Sha256::digest(&bytes);
        let hash = hex::encode(&digest[..8]);
        Ok(Self { weights, hash })
    }

    pub fn from_seed(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        Self::new(ModelWeights::init(config, seed)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        Self::new(load_weights(path)?)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.weights.config
    }

    /// First 16 hex digits of the SHA-256 of the serialized weights.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn new_cache(&self) -> KvCache {
        KvCache::new(self.config())
    }

    pub fn forward(&self, tokens: &[u32], cache: &mut KvCache) -> Result<Logits, ModelError> {
        forward(&self.weights, tokens, cache)
    }
}
