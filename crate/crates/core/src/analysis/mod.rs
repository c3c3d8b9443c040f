//! Diagnostics over decoding traces: answer-level entropy, the share of
//! entropy carried by high-entropy tokens, correct/incorrect cohorts, the
//! entropy profile of steps guidance did or did not change, guidance usage,
//! and token frequencies at guided positions.

mod ingest;
mod report;

pub use ingest::{ingest_external, ingest_reader, residual_entropy, IngestError};
pub use report::{ReportOptions, SummaryReport, TraceSummary};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decode::DecodeTrace;
use crate::tokenizer::VOCAB_SIZE;

pub const DEFAULT_CUTOFF: f64 = 0.5;
pub const DEFAULT_BIN_WIDTH: f64 = 0.25;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("trace has no generated tokens")]
    EmptyTrace,
    #[error("cohort {0} is empty")]
    EmptyCohort(&'static str),
    #[error("bin width must be positive, got {0}")]
    InvalidBinWidth(f64),
}

/// Per-token view shared by generated and ingested traces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenStat {
    pub step: usize,
    pub token_text: String,
    pub entropy: f64,
    pub gated: bool,
    pub changed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnswerRecord {
    pub source: String,
    pub model_name: String,
    pub correct: Option<bool>,
    pub tokens: Vec<TokenStat>,
    /// Some entropies were reconstructed from truncated top-k logprobs.
    pub entropy_approximated: bool,
    /// The full trace, when the input was written by this crate.
    pub trace: Option<DecodeTrace>,
}

impl From<DecodeTrace> for AnswerRecord {
    fn from(trace: DecodeTrace) -> Self {
        let tokens = trace
            .records
            .iter()
            .map(|r| TokenStat {
                step: r.step,
                token_text: r.token_text.clone(),
                entropy: r.entropy,
                gated: r.gated,
                changed: r.changed,
            })
            .collect();
        Self {
            source: trace.metadata.source.clone(),
            model_name: trace.metadata.model_name.clone(),
            correct: trace.metadata.correct,
            tokens,
            entropy_approximated: false,
            trace: Some(trace),
        }
    }
}

/// Mean per-token entropy.
pub fn answer_entropy(rec: &AnswerRecord) -> Result<f64, AnalysisError> {
    if rec.tokens.is_empty() {
        return Err(AnalysisError::EmptyTrace);
    }
    Ok(answer_entropy_sum(rec) / rec.tokens.len() as f64)
}

pub fn answer_entropy_sum(rec: &AnswerRecord) -> f64 {
    rec.tokens.iter().map(|t| t.entropy).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HighEntropyShare {
    pub cutoff: f64,
    pub count_above: usize,
    pub count_below: usize,
    pub entropy_above: f64,
    pub total_entropy: f64,
    /// Fraction of total entropy carried by tokens above the cutoff.
    pub share_above: f64,
    /// Total entropy was zero; `share_above` is reported as 0.
    pub zero_total: bool,
}

/// Tokens with entropy strictly above `cutoff` and their share of the
/// summed entropy.
pub fn high_entropy_share(rec: &AnswerRecord, cutoff: f64) -> HighEntropyShare {
    let mut count_above = 0;
    let mut entropy_above = 0.0;
    let mut total = 0.0;
    for t in &rec.tokens {
        total += t.entropy;
        if t.entropy > cutoff {
            count_above += 1;
            entropy_above += t.entropy;
        }
    }
    let zero_total = total <= 0.0;
    HighEntropyShare {
        cutoff,
        count_above,
        count_below: rec.tokens.len() - count_above,
        entropy_above,
        total_entropy: total,
        share_above: if zero_total { 0.0 } else { entropy_above / total },
        zero_total,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohortStats {
    pub count: usize,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl CohortStats {
    fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Self {
            count: values.len(),
            mean,
            std: var.sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CohortReport {
    pub correct: CohortStats,
    pub incorrect: CohortStats,
    /// `incorrect.mean - correct.mean`.
    pub mean_difference: f64,
}

/// Answer entropy statistics for labeled records. Unlabeled records and
/// records without tokens are skipped.
pub fn cohort_compare(records: &[AnswerRecord]) -> Result<CohortReport, AnalysisError> {
    let mut correct = Vec::new();
    let mut incorrect = Vec::new();
    for r in records {
        let (Some(label), Ok(h)) = (r.correct, answer_entropy(r)) else {
            continue;
        };
        if label {
            correct.push(h);
        } else {
            incorrect.push(h);
        }
    }
    if correct.is_empty() {
        return Err(AnalysisError::EmptyCohort("correct"));
    }
    if incorrect.is_empty() {
        return Err(AnalysisError::EmptyCohort("incorrect"));
    }
    let correct = CohortStats::of(&correct);
    let incorrect = CohortStats::of(&incorrect);
    Ok(CohortReport {
        correct,
        incorrect,
        mean_difference: incorrect.mean - correct.mean,
    })
}

/// Fixed-width bins `[k*w, (k+1)*w)` over `[0, upper)` plus an overflow bin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntropyHistogram {
    pub bin_width: f64,
    pub bins: Vec<usize>,
    pub overflow: usize,
}

impl EntropyHistogram {
    /// Default upper edge: `ln` of the byte tokenizer's vocabulary size.
    pub fn default_upper() -> f64 {
        (VOCAB_SIZE as f64).ln()
    }

    pub fn new(bin_width: f64, upper: f64) -> Result<Self, AnalysisError> {
        if !(bin_width.is_finite() && bin_width > 0.0) {
            return Err(AnalysisError::InvalidBinWidth(bin_width));
        }
        let n = (upper / bin_width).ceil().max(1.0) as usize;
        Ok(Self {
            bin_width,
            bins: vec![0; n],
            overflow: 0,
        })
    }

    pub fn add(&mut self, h: f64) {
        let k = (h / self.bin_width).floor();
        if k >= 0.0 && (k as usize) < self.bins.len() {
            self.bins[k as usize] += 1;
        } else {
            self.overflow += 1;
        }
    }

    pub fn total(&self) -> usize {
        self.bins.iter().sum::<usize>() + self.overflow
    }

    pub fn merge(&mut self, other: &Self) {
        for (a, b) in self.bins.iter_mut().zip(&other.bins) {
            *a += b;
        }
        self.overflow += other.overflow;
    }

    pub fn bin_edges(&self, k: usize) -> (f64, f64) {
        (k as f64 * self.bin_width, (k + 1) as f64 * self.bin_width)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChangedPartition {
    pub changed: EntropyHistogram,
    pub unchanged: EntropyHistogram,
    /// No step was gated; both histograms are empty.
    pub nothing_gated: bool,
}

/// Splits gated steps by whether guidance changed the argmax, binning each
/// side by entropy.
pub fn changed_partition(rec: &AnswerRecord, bin_width: f64, upper: f64) -> Result<ChangedPartition, AnalysisError> {
    let mut changed = EntropyHistogram::new(bin_width, upper)?;
    let mut unchanged = changed.clone();
    for t in rec.tokens.iter().filter(|t| t.gated) {
        if t.changed {
            changed.add(t.entropy);
        } else {
            unchanged.add(t.entropy);
        }
    }
    let nothing_gated = changed.total() + unchanged.total() == 0;
    Ok(ChangedPartition {
        changed,
        unchanged,
        nothing_gated,
    })
}

/// Gated steps over generated steps; 0 for an empty trace.
pub fn cfg_usage(rec: &AnswerRecord) -> f64 {
    if rec.tokens.is_empty() {
        return 0.0;
    }
    rec.tokens.iter().filter(|t| t.gated).count() as f64 / rec.tokens.len() as f64
}

/// How guided positions are turned into words.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum WordMode {
    /// Each gated token's text, whitespace-trimmed.
    #[default]
    Token,
    /// Whitespace-delimited words rebuilt from consecutive tokens; a word
    /// counts once if any of its tokens was gated. Suits byte tokenizers.
    Word,
}

/// Texts emitted at gated positions, by descending count, ties in
/// lexicographic order, at most `top_n` rows.
pub fn gated_token_frequencies(records: &[AnswerRecord], top_n: usize, mode: WordMode) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for rec in records {
        match mode {
            WordMode::Token => {
                for t in rec.tokens.iter().filter(|t| t.gated) {
                    let w = t.token_text.trim();
                    if !w.is_empty() {
                        *counts.entry(w.to_string()).or_default() += 1;
                    }
                }
            }
            WordMode::Word => {
                let mut word = String::new();
                let mut hit = false;
                let mut flush = |word: &mut String, hit: &mut bool| {
                    if !word.is_empty() && *hit {
                        *counts.entry(std::mem::take(word)).or_default() += 1;
                    }
                    word.clear();
                    *hit = false;
                };
                for t in &rec.tokens {
                    for c in t.token_text.chars() {
                        if c.is_whitespace() {
                            flush(&mut word, &mut hit);
                        } else {
                            word.push(c);
                            hit |= t.gated;
                        }
                    }
                }
                flush(&mut word, &mut hit);
            }
        }
    }
    let mut rows: Vec<(String, usize)> = counts.into_iter().collect();
    // BTreeMap order is lexicographic; a stable sort by count keeps it for ties.
    rows.sort_by_key(|r| std::cmp::Reverse(r.1));
    rows.truncate(top_n);
    rows
}

#[cfg(test)]
pub(crate) fn synthetic(entropies: &[f64], gated: &[bool], changed: &[bool], texts: &[&str]) -> AnswerRecord {
    AnswerRecord {
        source: "test".into(),
        model_name: "none".into(),
        correct: None,
        tokens: entropies
            .iter()
            .enumerate()
            .map(|(i, &h)| TokenStat {
                step: i,
                token_text: texts.get(i).unwrap_or(&"x").to_string(),
                entropy: h,
                gated: *gated.get(i).unwrap_or(&false),
                changed: *changed.get(i).unwrap_or(&false),
            })
            .collect(),
        entropy_approximated: false,
        trace: None,
    }
}
