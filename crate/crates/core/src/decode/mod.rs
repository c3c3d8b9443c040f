//! Decoding loop for direct, vanilla-CFG and entropy-gated modes.
//!
//! Cost model, in forwarded positions, for a prompt of length `P`, a
//! negative prompt of length `n`, `T` generated tokens and `g` negative
//! branches actually run:
//!
//! | mode    | total               |
//! |---------|---------------------|
//! | direct  | `P + T`             |
//! | vanilla | `P + n + 2T`        |
//! | mti     | `P + T + g*n`       |
//!
//! Every emitted token, including a terminating one, is forwarded through
//! the conditional cache (and the unconditional cache in vanilla mode), so
//! each step forwards at least one position.

mod jsonl;

pub use jsonl::{read_traces, trace_to_jsonl, write_trace, TraceLine};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::guidance::{self, GuidanceConfig, GuidanceError, GuidanceMode, StepDecision};
use crate::model::{ModelBundle, ModelError};
use crate::sampling::{Sampler, SamplerConfig};
use crate::tokenizer::{Tokenizer, EOS};

#[derive(Debug, Error)]
pub enum DecodeError {
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt of {prompt} tokens needs {needed} positions with headroom, max_context is {max_context}")]
    PromptOverflow {
        prompt: usize,
        needed: usize,
        max_context: usize,
    },
    #[error("invalid decode config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Guidance(#[from] GuidanceError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub token_id: u32,
    pub token_text: String,
    pub entropy: f64,
    pub gated: bool,
    pub branch_overflow: bool,
    pub argmax_before: u32,
    pub argmax_after: u32,
    /// `argmax_before != argmax_after` on a gated step; always false otherwise.
    pub changed: bool,
    #[serde(rename = "fwd_delta")]
    pub forwarded_positions_delta: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeCounter {
    pub forwarded_positions_prompt: usize,
    pub forwarded_positions_generation: usize,
    pub forwarded_positions_branch: usize,
    /// Negative branches actually run (gated steps minus overflowed ones).
    pub interventions: usize,
}

impl ComputeCounter {
    pub fn total(&self) -> usize {
        self.forwarded_positions_prompt + self.forwarded_positions_generation + self.forwarded_positions_branch
    }
}

/// Largest cache lengths reached during a session.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CachePeaks {
    pub cond: usize,
    /// Zero unless the mode keeps a second cache.
    pub uncond: usize,
}

/// Where the model weights came from, echoed into trace metadata by callers
/// that know it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSource {
    Seed { seed: u64, embed_scale: f64 },
    File { path: String, embed_scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub source: String,
    pub model_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    pub mode: GuidanceMode,
    #[serde(with = "tau_serde")]
    pub tau: f64,
    pub omega: f64,
    pub neg_prompt: String,
    pub neg_prompt_tokens: Vec<u32>,
    pub sampler: SamplerConfig,
    pub max_tokens: usize,
    pub stop_sequences: Vec<Vec<u32>>,
    pub model_hash: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_source: Option<ModelSource>,
    pub prompt: String,
    pub prompt_tokens: Vec<u32>,
}

impl TraceMetadata {
    pub fn guidance(&self) -> GuidanceConfig {
        GuidanceConfig {
            tau: self.tau,
            omega: self.omega,
            neg_prompt_tokens: self.neg_prompt_tokens.clone(),
            mode: self.mode,
        }
    }
}

/// JSON has no infinity; an infinite threshold is written as `"inf"`.
mod tau_serde {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(tau: &f64, s: S) -> Result<S::Ok, S::Error> {
        if tau.is_infinite() && *tau > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*tau)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Text(s) => Err(de::Error::custom(format!("invalid tau {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeTrace {
    pub metadata: TraceMetadata,
    pub records: Vec<StepRecord>,
    pub totals: ComputeCounter,
    pub cache: CachePeaks,
}

impl DecodeTrace {
    pub fn generated_tokens(&self) -> Vec<u32> {
        self.records.iter().map(|r| r.token_id).collect()
    }

    pub fn gated_steps(&self) -> usize {
        self.records.iter().filter(|r| r.gated).count()
    }

    /// Fraction of generated tokens at which the gate fired.
    pub fn cfg_usage(&self) -> f64 {
        if self.records.is_empty() {
            0.0
        } else {
            self.gated_steps() as f64 / self.records.len() as f64
        }
    }

    pub fn text(&self) -> String {
        Tokenizer.display(&self.generated_tokens())
    }
}

/// Forwarded-position totals compared with the closed form for the mode.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub mode: GuidanceMode,
    pub prompt_len: usize,
    pub neg_len: usize,
    pub generated: usize,
    pub interventions: usize,
    pub measured_total: usize,
    pub expected_total: usize,
    pub measured_generation: usize,
    pub measured_branch: usize,
    pub peak_cache_cond: usize,
    pub peak_cache_uncond: usize,
    /// Per-step deltas, intervention count and totals agree with each other.
    pub internally_consistent: bool,
}

impl CostReport {
    pub fn matches(&self) -> bool {
        self.internally_consistent && self.measured_total == self.expected_total
    }
}

pub fn expected_forwarded_positions(mode: GuidanceMode, prompt_len: usize, neg_len: usize, generated: usize, interventions: usize) -> usize {
    match mode {
        GuidanceMode::Direct => prompt_len + generated,
        GuidanceMode::Vanilla => prompt_len + neg_len + 2 * generated,
        GuidanceMode::Mti => prompt_len + generated + interventions * neg_len,
    }
}

pub fn cost_summary(trace: &DecodeTrace) -> CostReport {
    let m = &trace.metadata;
    let t = &trace.totals;
    let generated = trace.records.len();
    let neg_len = m.neg_prompt_tokens.len();
    let step_sum: usize = trace.records.iter().map(|r| r.forwarded_positions_delta).sum();
    let overflowed = trace.records.iter().filter(|r| r.branch_overflow).count();
    let internally_consistent = step_sum == t.forwarded_positions_generation + t.forwarded_positions_branch
        && t.interventions + overflowed == trace.gated_steps()
        && trace.records.iter().all(|r| r.forwarded_positions_delta >= 1 && (!r.changed || r.gated));
    CostReport {
        mode: m.mode,
        prompt_len: m.prompt_tokens.len(),
        neg_len,
        generated,
        interventions: t.interventions,
        measured_total: t.total(),
        expected_total: expected_forwarded_positions(m.mode, m.prompt_tokens.len(), neg_len, generated, t.interventions),
        measured_generation: t.forwarded_positions_generation,
        measured_branch: t.forwarded_positions_branch,
        peak_cache_cond: trace.cache.cond,
        peak_cache_uncond: trace.cache.uncond,
        internally_consistent,
    }
}

fn ends_with_stop(generated: &[u32], stop: &[Vec<u32>]) -> bool {
    stop.iter().any(|s| !s.is_empty() && generated.ends_with(s))
}

/// Generates up to `max_tokens` tokens after `prompt_tokens`.
///
/// Generation stops after EOS, after the output ends with any of
/// `stop_sequences` (a single-token sequence is a stop token), at
/// `max_tokens`, or when the context has no room for another token. The
/// stopping token is part of the trace.
pub fn decode(
    model: &ModelBundle,
    prompt_tokens: &[u32],
    gcfg: &GuidanceConfig,
    scfg: &SamplerConfig,
    max_tokens: usize,
    stop_sequences: &[Vec<u32>],
) -> Result<DecodeTrace, DecodeError> {
    gcfg.validate()?;
    scfg.validate().map_err(DecodeError::InvalidConfig)?;
    let weights = &model.weights;
    let max_context = weights.config.max_context;
    if prompt_tokens.is_empty() {
        return Err(DecodeError::EmptyPrompt);
    }
    let needed = prompt_tokens.len() + 1 + gcfg.branch_len();
    if needed > max_context {
        return Err(DecodeError::PromptOverflow {
            prompt: prompt_tokens.len(),
            needed,
            max_context,
        });
    }

    let tok = Tokenizer;
    let vanilla = gcfg.mode == GuidanceMode::Vanilla;
    let n_neg = gcfg.neg_prompt_tokens.len();
    let mut totals = ComputeCounter::default();
    let mut peaks = CachePeaks::default();
    let mut sampler = Sampler::new(*scfg);

    let mut cache_c = model.new_cache();
    let mut cond = model.forward(prompt_tokens, &mut cache_c)?;
    totals.forwarded_positions_prompt += prompt_tokens.len();
    peaks.cond = cache_c.len();

    let mut uncond_state = if vanilla {
        let (cache_u, logits) = guidance::init_uncond_cache(weights, &gcfg.neg_prompt_tokens)?;
        totals.forwarded_positions_prompt += n_neg;
        peaks.uncond = cache_u.len();
        Some((cache_u, logits))
    } else {
        None
    };

    let mut records = Vec::new();
    let mut generated = Vec::new();
    for step in 0..max_tokens {
        if cache_c.remaining() == 0 || uncond_state.as_ref().is_some_and(|(c, _)| c.remaining() == 0) {
            break;
        }
        let len_before = cache_c.len();
        let decision: StepDecision = match &uncond_state {
            Some((_, uncond)) => guidance::decide_vanilla_step(cond, uncond, gcfg.omega)?,
            None => guidance::decide_step(weights, &mut cache_c, cond, gcfg)?,
        };
        let mut delta = decision.branch_positions;
        if decision.branch_positions > 0 {
            totals.forwarded_positions_branch += decision.branch_positions;
            totals.interventions += 1;
            peaks.cond = peaks.cond.max(len_before + decision.branch_positions);
        }

        let token = sampler.sample(&decision.final_logits);
        cond = model.forward(&[token], &mut cache_c)?;
        totals.forwarded_positions_generation += 1;
        delta += 1;
        peaks.cond = peaks.cond.max(cache_c.len());
        if let Some((cache_u, uncond)) = uncond_state.as_mut() {
            *uncond = guidance::vanilla_uncond_step(weights, cache_u, token)?;
            totals.forwarded_positions_generation += 1;
            totals.interventions += 1;
            delta += 1;
            peaks.uncond = peaks.uncond.max(cache_u.len());
        }

        records.push(StepRecord {
            step,
            token_id: token,
            token_text: tok.token_text(token),
            entropy: decision.entropy,
            gated: decision.gated,
            branch_overflow: decision.branch_overflow,
            argmax_before: decision.argmax_before,
            argmax_after: decision.argmax_after,
            changed: decision.changed(),
            forwarded_positions_delta: delta,
        });
        generated.push(token);
        if token == EOS || ends_with_stop(&generated, stop_sequences) {
            break;
        }
    }

    let metadata = TraceMetadata {
        source: "mti".to_string(),
        model_name: format!("tiny-transformer-{}", model.hash()),
        correct: None,
        mode: gcfg.mode,
        tau: gcfg.tau,
        omega: gcfg.omega,
        neg_prompt: tok.display(&gcfg.neg_prompt_tokens),
        neg_prompt_tokens: gcfg.neg_prompt_tokens.clone(),
        sampler: *scfg,
        max_tokens,
        stop_sequences: stop_sequences.to_vec(),
        model_hash: model.hash().to_string(),
        model_source: None,
        prompt: tok.display(prompt_tokens),
        prompt_tokens: prompt_tokens.to_vec(),
    };
    Ok(DecodeTrace {
        metadata,
        records,
        totals,
        cache: peaks,
    })
}
