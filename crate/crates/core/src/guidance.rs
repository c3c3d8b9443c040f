//! Entropy gating and classifier-free guidance.
//!
//! The guided prediction is `(1 - omega) * uncond + omega * cond`. It is
//! applied to raw logits: the two coefficients sum to one, so this differs
//! from combining log-probabilities only by a constant shift and yields the
//! same distribution after softmax.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{forward, KvCache, ModelError, ModelWeights};
use crate::tokenizer::Tokenizer;

pub use crate::model::Logits;

/// Negative prompt used when none is given.
pub const DEFAULT_NEG_PROMPT: &str = "OUTPUT ERROR";
pub const DEFAULT_OMEGA: f64 = 1.5;
pub const DEFAULT_TAU: f64 = 1.5;

#[derive(Debug, Error)]
pub enum GuidanceError {
    #[error("logit vectors differ in length: {cond} vs {uncond}")]
    LengthMismatch { cond: usize, uncond: usize },
    #[error("negative prompt is empty")]
    EmptyNegPrompt,
    #[error("negative branch needs {needed} positions but only {available} remain")]
    BranchOverflow { needed: usize, available: usize },
    #[error("invalid guidance config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Normalized next-token distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbDist(pub Vec<f64>);

impl ProbDist {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &Logits) -> ProbDist {
    let s = logits.as_slice();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = s.iter().map(|&v| (v - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    ProbDist(exps.into_iter().map(|e| e / z).collect())
}

/// `log softmax(logits)`, computed as `x - max - ln(sum exp(x - max))`.
pub fn log_softmax(logits: &Logits) -> Logits {
    let s = logits.as_slice();
    let max = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = s.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    Logits(s.iter().map(|&v| v - lse).collect())
}

/// Shannon entropy in nats, `-sum p ln p` with `0 ln 0 = 0`.
pub fn entropy(dist: &ProbDist) -> f64 {
    let h: f64 = dist
        .as_slice()
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.ln())
        .sum();
    // Rounding can push a one-hot distribution a hair below zero.
    h.max(0.0)
}

/// Entropy of the softmax of `logits`.
pub fn logits_entropy(logits: &Logits) -> f64 {
    entropy(&softmax(logits))
}

/// Strict threshold test. `tau = +inf` never fires.
pub fn gate(entropy: f64, tau: f64) -> bool {
    entropy > tau
}

pub fn cfg_combine(cond: &Logits, uncond: &Logits, omega: f64) -> Result<Logits, GuidanceError> {
    if cond.len() != uncond.len() {
        return Err(GuidanceError::LengthMismatch {
            cond: cond.len(),
            uncond: uncond.len(),
        });
    }
    let w_u = 1.0 - omega;
    Ok(Logits(
        cond.as_slice()
            .iter()
            .zip(uncond.as_slice())
            .map(|(&c, &u)| w_u * u + omega * c)
            .collect(),
    ))
}

/// Unconditional prediction obtained by appending `neg_tokens` to the
/// conditional cache, reading the logits after the last one, and truncating
/// the cache back to its original length.
///
/// On error the cache is left as it was.
pub fn negative_branch_logits(
    weights: &ModelWeights,
    cache: &mut KvCache,
    neg_tokens: &[u32],
) -> Result<Logits, GuidanceError> {
    if neg_tokens.is_empty() {
        return Err(GuidanceError::EmptyNegPrompt);
    }
    if neg_tokens.len() > cache.remaining() {
        return Err(GuidanceError::BranchOverflow {
            needed: neg_tokens.len(),
            available: cache.remaining(),
        });
    }
    let restore = cache.len();
    let result = forward(weights, neg_tokens, cache);
    cache.truncate(restore)?;
    Ok(result?)
}

/// Builds the dedicated unconditional cache of vanilla CFG by forwarding the
/// negative prompt. Returns the cache and the unconditional logits for the
/// first generated position.
pub fn init_uncond_cache(weights: &ModelWeights, neg_tokens: &[u32]) -> Result<(KvCache, Logits), GuidanceError> {
    if neg_tokens.is_empty() {
        return Err(GuidanceError::EmptyNegPrompt);
    }
    let mut cache = KvCache::new(&weights.config);
    let logits = forward(weights, neg_tokens, &mut cache)?;
    Ok((cache, logits))
}

/// Feeds the previously emitted token to the unconditional cache and
/// returns the unconditional logits for the next step.
pub fn vanilla_uncond_step(weights: &ModelWeights, cache: &mut KvCache, token: u32) -> Result<Logits, ModelError> {
    forward(weights, &[token], cache)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GuidanceMode {
    /// No guidance.
    Direct,
    /// CFG at every step with a second cache seeded by the negative prompt.
    Vanilla,
    /// CFG only at steps whose entropy exceeds tau, with the negative
    /// branch built on the conditional cache.
    Mti,
}

impl GuidanceMode {
    pub const ALL: [GuidanceMode; 3] = [GuidanceMode::Direct, GuidanceMode::Vanilla, GuidanceMode::Mti];

    pub fn as_str(&self) -> &'static str {
        match self {
            GuidanceMode::Direct => "direct",
            GuidanceMode::Vanilla => "vanilla",
            GuidanceMode::Mti => "mti",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GuidanceMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "direct" => Ok(GuidanceMode::Direct),
            "vanilla" => Ok(GuidanceMode::Vanilla),
            "mti" => Ok(GuidanceMode::Mti),
            other => Err(format!("unknown mode {other:?} (expected direct, vanilla or mti)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    /// Entropy threshold in nats; `f64::INFINITY` disables the gate.
    pub tau: f64,
    pub omega: f64,
    pub neg_prompt_tokens: Vec<u32>,
    pub mode: GuidanceMode,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            omega: DEFAULT_OMEGA,
            neg_prompt_tokens: Tokenizer.tokenize(DEFAULT_NEG_PROMPT.as_bytes()),
            mode: GuidanceMode::Mti,
        }
    }
}

impl GuidanceConfig {
    pub fn new(mode: GuidanceMode) -> Self {
        Self {
            mode,
            ..Self::default()
        }
    }

    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_omega(mut self, omega: f64) -> Self {
        self.omega = omega;
        self
    }

    pub fn with_neg_prompt(mut self, tokens: Vec<u32>) -> Self {
        self.neg_prompt_tokens = tokens;
        self
    }

    pub fn validate(&self) -> Result<(), GuidanceError> {
        if self.tau.is_nan() || self.tau < 0.0 {
            return Err(GuidanceError::InvalidConfig(format!("tau must be >= 0 or inf, got {}", self.tau)));
        }
        if !self.omega.is_finite() {
            return Err(GuidanceError::InvalidConfig(format!("omega must be finite, got {}", self.omega)));
        }
        if self.mode != GuidanceMode::Direct && self.neg_prompt_tokens.is_empty() {
            return Err(GuidanceError::InvalidConfig(format!(
                "mode {} needs a nonempty negative prompt",
                self.mode
            )));
        }
        Ok(())
    }

    /// Extra positions one negative branch forwards.
    pub fn branch_len(&self) -> usize {
        match self.mode {
            GuidanceMode::Direct => 0,
            _ => self.neg_prompt_tokens.len(),
        }
    }
}

/// Outcome of one guided step before a token is emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDecision {
    pub entropy: f64,
    pub gated: bool,
    /// Gate fired but the branch did not fit in the context.
    pub branch_overflow: bool,
    pub cond_logits: Logits,
    pub final_logits: Logits,
    pub argmax_before: u32,
    pub argmax_after: u32,
    /// Positions forwarded by the negative branch at this step.
    pub branch_positions: usize,
}

impl StepDecision {
    fn ungated(entropy: f64, cond: Logits) -> Self {
        let argmax = cond.argmax();
        Self {
            entropy,
            gated: false,
            branch_overflow: false,
            final_logits: cond.clone(),
            cond_logits: cond,
            argmax_before: argmax,
            argmax_after: argmax,
            branch_positions: 0,
        }
    }

    fn guided(entropy: f64, cond: Logits, combined: Logits, branch_positions: usize) -> Self {
        Self {
            entropy,
            gated: true,
            branch_overflow: false,
            argmax_before: cond.argmax(),
            argmax_after: combined.argmax(),
            cond_logits: cond,
            final_logits: combined,
            branch_positions,
        }
    }

    pub fn changed(&self) -> bool {
        self.gated && self.argmax_before != self.argmax_after
    }
}

/// Direct or entropy-gated step. In direct mode the gate is never consulted
/// but the entropy is still reported. In mti mode a gated step runs the
/// negative branch on `cache`; if the branch would overflow the context the
/// step falls back to the conditional logits and is marked.
pub fn decide_step(
    weights: &ModelWeights,
    cache: &mut KvCache,
    cond: Logits,
    cfg: &GuidanceConfig,
) -> Result<StepDecision, GuidanceError> {
    let h = logits_entropy(&cond);
    match cfg.mode {
        GuidanceMode::Direct => Ok(StepDecision::ungated(h, cond)),
        GuidanceMode::Mti if !gate(h, cfg.tau) => Ok(StepDecision::ungated(h, cond)),
        GuidanceMode::Mti => match negative_branch_logits(weights, cache, &cfg.neg_prompt_tokens) {
            Ok(uncond) => {
                let combined = cfg_combine(&cond, &uncond, cfg.omega)?;
                Ok(StepDecision::guided(h, cond, combined, cfg.neg_prompt_tokens.len()))
            }
            Err(GuidanceError::BranchOverflow { .. }) => {
                let mut d = StepDecision::ungated(h, cond);
                d.gated = true;
                d.branch_overflow = true;
                Ok(d)
            }
            Err(e) => Err(e),
        },
        GuidanceMode::Vanilla => Err(GuidanceError::InvalidConfig(
            "vanilla steps need unconditional logits; use decide_vanilla_step".into(),
        )),
    }
}

/// Vanilla CFG step: guidance applies unconditionally.
pub fn decide_vanilla_step(cond: Logits, uncond: &Logits, omega: f64) -> Result<StepDecision, GuidanceError> {
    let h = logits_entropy(&cond);
    let combined = cfg_combine(&cond, uncond, omega)?;
    Ok(StepDecision::guided(h, cond, combined, 0))
}
