//! Shared fixtures for the criterion benches.

use mti_core::{ModelBundle, ModelWeights, Tokenizer};

/// Seeded model with a sharpened embedding so gating is selective.
pub fn bench_model() -> ModelBundle {
    let mut w = ModelWeights::init(Default::default(), 7).expect("default config is valid");
    w.scale_embedding(5.0);
    ModelBundle::new(w).expect("fresh weights are finite")
}

pub fn bench_prompt() -> Vec<u32> {
    let mut p = vec![mti_core::tokenizer::BOS];
    p.extend(Tokenizer.tokenize(b"What is 17 times 23?"));
    p
}
