//! Entropy-gated classifier-free guidance decoding.
//!
//! The crate bundles a tiny deterministic byte-level transformer with an
//! explicit KV cache ([`model`]), the guidance math that runs against it
//! ([`guidance`]), a decoding loop offering direct, vanilla dual-cache CFG
//! and entropy-gated CFG modes ([`decode`]), and trace analytics
//! ([`analysis`]).
//!
//! Token entropy throughout is the non-negative Shannon form
//! `H = -sum_i p_i ln p_i`, measured in nats.

pub mod analysis;
pub mod decode;
pub mod guidance;
pub mod model;
pub mod rng;
pub mod sampling;
pub mod tokenizer;

pub use decode::{cost_summary, decode, ComputeCounter, CostReport, DecodeError, DecodeTrace, ModelSource, StepRecord, TraceMetadata};
pub use guidance::{GuidanceConfig, GuidanceMode, Logits, ProbDist, StepDecision};
pub use model::{KvCache, ModelBundle, ModelConfig, ModelError, ModelWeights};
pub use sampling::{SamplerConfig, SamplerKind};
pub use tokenizer::Tokenizer;
