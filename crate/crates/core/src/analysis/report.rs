use serde::Serialize;

use super::{
    answer_entropy, answer_entropy_sum, cfg_usage, changed_partition, cohort_compare, gated_token_frequencies,
    high_entropy_share, AnalysisError, AnswerRecord, CohortReport, EntropyHistogram, WordMode, DEFAULT_BIN_WIDTH,
    DEFAULT_CUTOFF,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReportOptions {
    pub cutoff: f64,
    pub bin_width: f64,
    pub hist_upper: f64,
    pub top_n: usize,
    pub word_mode: WordMode,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            cutoff: DEFAULT_CUTOFF,
            bin_width: DEFAULT_BIN_WIDTH,
            hist_upper: EntropyHistogram::default_upper(),
            top_n: 20,
            word_mode: WordMode::Token,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceSummary {
    pub index: usize,
    pub source: String,
    pub model_name: String,
    pub correct: Option<bool>,
    pub tokens: usize,
    /// Mean per-token entropy; `None` for an empty answer.
    pub answer_entropy: Option<f64>,
    pub answer_entropy_sum: f64,
    pub count_above: usize,
    pub share_above: f64,
    pub cfg_usage: f64,
    pub gated: usize,
    pub changed: usize,
    pub entropy_approximated: bool,
}

/// Corpus-level report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryReport {
    pub options: ReportOptions,
    pub traces: usize,
    pub tokens: usize,
    pub per_trace: Vec<TraceSummary>,
    /// Present when both cohorts have at least one labeled answer.
    pub cohorts: Option<CohortReport>,
    pub cohort_error: Option<String>,
    pub tokens_above: usize,
    pub tokens_below: usize,
    pub entropy_share_above: f64,
    pub entropy_share_below: f64,
    pub zero_total_entropy: bool,
    /// Gated tokens over all tokens in the corpus.
    pub cfg_usage: f64,
    pub changed_hist: EntropyHistogram,
    pub unchanged_hist: EntropyHistogram,
    pub nothing_gated: bool,
    pub gated_frequencies: Vec<(String, usize)>,
    pub entropy_approximated: bool,
}

impl SummaryReport {
    pub fn build(records: &[AnswerRecord], opts: ReportOptions) -> Result<Self, AnalysisError> {
        let mut changed_hist = EntropyHistogram::new(opts.bin_width, opts.hist_upper)?;
        let mut unchanged_hist = changed_hist.clone();
        let mut per_trace = Vec::with_capacity(records.len());
        let (mut above, mut below, mut mass_above, mut mass) = (0, 0, 0.0, 0.0);
        let (mut tokens, mut gated_total) = (0, 0);

        for (index, rec) in records.iter().enumerate() {
            let share = high_entropy_share(rec, opts.cutoff);
            let part = changed_partition(rec, opts.bin_width, opts.hist_upper)?;
            changed_hist.merge(&part.changed);
            unchanged_hist.merge(&part.unchanged);
            above += share.count_above;
            below += share.count_below;
            mass_above += share.entropy_above;
            mass += share.total_entropy;
            tokens += rec.tokens.len();
            let gated = rec.tokens.iter().filter(|t| t.gated).count();
            gated_total += gated;
            per_trace.push(TraceSummary {
                index,
                source: rec.source.clone(),
                model_name: rec.model_name.clone(),
                correct: rec.correct,
                tokens: rec.tokens.len(),
                answer_entropy: answer_entropy(rec).ok(),
                answer_entropy_sum: answer_entropy_sum(rec),
                count_above: share.count_above,
                share_above: share.share_above,
                cfg_usage: cfg_usage(rec),
                gated,
                changed: part.changed.total(),
                entropy_approximated: rec.entropy_approximated,
            });
        }

        let zero_total_entropy = mass <= 0.0;
        let entropy_share_above = if zero_total_entropy { 0.0 } else { mass_above / mass };
        let (cohorts, cohort_error) = match cohort_compare(records) {
            Ok(c) => (Some(c), None),
            Err(e) => (None, Some(e.to_string())),
        };
        Ok(Self {
            options: opts,
            traces: records.len(),
            tokens,
            per_trace,
            cohorts,
            cohort_error,
            tokens_above: above,
            tokens_below: below,
            entropy_share_above,
            entropy_share_below: if zero_total_entropy { 0.0 } else { 1.0 - entropy_share_above },
            zero_total_entropy,
            cfg_usage: if tokens == 0 { 0.0 } else { gated_total as f64 / tokens as f64 },
            nothing_gated: gated_total == 0,
            changed_hist,
            unchanged_hist,
            gated_frequencies: gated_token_frequencies(records, opts.top_n, opts.word_mode),
            entropy_approximated: records.iter().any(|r| r.entropy_approximated),
        })
    }
}
