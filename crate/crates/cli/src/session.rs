//! Turns parsed flags into a model, prompts and decode configuration.

use std::fs;

use mti_core::model::read_weights;
use mti_core::tokenizer::BOS;
use mti_core::{DecodeTrace, GuidanceConfig, GuidanceMode, ModelBundle, ModelConfig, ModelSource, ModelWeights, SamplerConfig, Tokenizer};

use crate::args::{DecodeArgs, ModelArgs};
use crate::error::CliError;

pub fn load_model(args: &ModelArgs) -> Result<(ModelBundle, ModelSource), CliError> {
    let scale = args.embed_scale;
    let (mut weights, source) = match (&args.source.seed, &args.source.weights) {
        (Some(seed), None) => (
            ModelWeights::init(ModelConfig::default(), *seed)?,
            ModelSource::Seed {
                seed: *seed,
                embed_scale: scale,
            },
        ),
        (None, Some(path)) => {
            let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
            (
                read_weights(&bytes)?,
                ModelSource::File {
                    path: path.display().to_string(),
                    embed_scale: scale,
                },
            )
        }
        _ => return Err(CliError::config("exactly one of --seed and --weights is required")),
    };
    if scale != 1.0 {
        weights.scale_embedding(scale as f32);
    }
    Ok((ModelBundle::new(weights)?, source))
}

/// Prompt texts, one per line of the prompts file or the single inline one.
pub fn prompt_texts(args: &DecodeArgs) -> Result<Vec<String>, CliError> {
    if let Some(p) = &args.prompts.prompt {
        return Ok(vec![p.clone()]);
    }
    let path = args.prompts.prompts_file.as_ref().expect("clap enforces a prompt source");
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let prompts: Vec<String> = text.lines().map(|l| l.strip_suffix('\r').unwrap_or(l).to_string()).collect();
    if prompts.is_empty() {
        return Err(CliError::config(format!("{} holds no prompts", path.display())));
    }
    Ok(prompts)
}

pub fn prompt_tokens(text: &str) -> Vec<u32> {
    let mut t = vec![BOS];
    t.extend(Tokenizer.tokenize(text.as_bytes()));
    t
}

/// Everything a single decode call needs besides the model and prompt.
#[derive(Debug, Clone)]
pub struct Plan {
    pub guidance: GuidanceConfig,
    pub sampler: SamplerConfig,
    pub max_tokens: usize,
    pub stop: Vec<Vec<u32>>,
    pub neg_prompt: String,
}

impl Plan {
    pub fn new(args: &DecodeArgs, mode: GuidanceMode) -> Result<Self, CliError> {
        let g = &args.guidance;
        let neg = Tokenizer.tokenize(g.neg_prompt.as_bytes());
        let guidance = GuidanceConfig::new(mode).with_tau(g.tau).with_omega(g.omega).with_neg_prompt(neg);
        guidance.validate().map_err(|e| CliError::config(e.to_string()))?;
        let s = &args.sampler;
        let sampler = SamplerConfig {
            kind: s.sampler,
            temperature: s.temperature,
            top_p: s.top_p,
            top_k: s.top_k,
            seed: s.sample_seed,
        };
        sampler.validate().map_err(CliError::Config)?;
        let mut stop = Vec::with_capacity(args.stop.len());
        for text in &args.stop {
            if text.is_empty() {
                return Err(CliError::config("--stop text must not be empty"));
            }
            stop.push(Tokenizer.tokenize(text.as_bytes()));
        }
        Ok(Self {
            guidance,
            sampler,
            max_tokens: args.max_tokens,
            stop,
            neg_prompt: g.neg_prompt.clone(),
        })
    }

    pub fn with_mode(&self, mode: GuidanceMode) -> Self {
        let mut p = self.clone();
        p.guidance.mode = mode;
        p
    }

    pub fn run(&self, model: &ModelBundle, source: &ModelSource, prompt: &str) -> Result<DecodeTrace, CliError> {
        let tokens = prompt_tokens(prompt);
        let mut trace = mti_core::decode(model, &tokens, &self.guidance, &self.sampler, self.max_tokens, &self.stop)?;
        trace.metadata.neg_prompt = self.neg_prompt.clone();
        trace.metadata.prompt = prompt.to_string();
        trace.metadata.model_source = Some(source.clone());
        Ok(trace)
    }
}

/// The one-line per-trace summary shared by `generate` and `analyze`.
pub fn summary_line(label: &str, trace: &DecodeTrace) -> String {
    let t = &trace.totals;
    format!(
        "{label}: mode={} tokens={} cfg_usage={:.6} forwarded={} (prompt={} generation={} branch={}) interventions={}",
        trace.metadata.mode,
        trace.records.len(),
        trace.cfg_usage(),
        t.total(),
        t.forwarded_positions_prompt,
        t.forwarded_positions_generation,
        t.forwarded_positions_branch,
        t.interventions
    )
}
