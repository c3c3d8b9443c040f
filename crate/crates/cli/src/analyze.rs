//! `analyze`: corpus report from one or more trace files.
//!
//! CSV outputs, all with a header row:
//!
//! - `per_trace.csv`: index, source, model_name, correct, tokens,
//!   answer_entropy, answer_entropy_sum, count_above, share_above, cfg_usage,
//!   gated, changed, entropy_approximated (one row per trace, corpus order)
//! - `histogram.csv`: bin_lo, bin_hi, changed, unchanged (ascending bins; the
//!   last row is the overflow bin with `bin_hi` = `inf`)
//! - `frequencies.csv`: rank, token_text, count (descending count, ties in
//!   lexicographic order)

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use mti_core::analysis::{ingest_external, AnswerRecord, EntropyHistogram, ReportOptions, SummaryReport, WordMode};

use crate::args::AnalyzeArgs;
use crate::error::{ingest_error, CliError};
use crate::session;

pub fn parse_labels(text: &str, path: &Path) -> Result<Vec<bool>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let v = raw.trim();
        if v.is_empty() {
            continue;
        }
        out.push(match v.to_ascii_lowercase().as_str() {
            "correct" | "true" | "1" => true,
            "incorrect" | "false" | "0" => false,
            other => return Err(CliError::Schema(format!("{}: line {}: unknown label {other:?}", path.display(), i + 1))),
        });
    }
    Ok(out)
}

pub fn load_corpus(args: &AnalyzeArgs) -> Result<Vec<AnswerRecord>, CliError> {
    let mut records = Vec::new();
    for path in &args.inputs {
        records.extend(ingest_external(path).map_err(|e| ingest_error(path, e))?);
    }
    if records.is_empty() {
        return Err(CliError::Schema("corpus holds no traces".into()));
    }
    if let Some(path) = &args.labels {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let labels = parse_labels(&text, path)?;
        if labels.len() != records.len() {
            return Err(CliError::config(format!(
                "{} has {} labels for {} traces",
                path.display(),
                labels.len(),
                records.len()
            )));
        }
        for (r, l) in records.iter_mut().zip(labels) {
            r.correct = Some(l);
        }
    }
    Ok(records)
}

pub fn options(args: &AnalyzeArgs) -> ReportOptions {
    ReportOptions {
        cutoff: args.cutoff,
        bin_width: args.bin_width,
        hist_upper: args.hist_upper.unwrap_or_else(EntropyHistogram::default_upper),
        top_n: args.top_n,
        word_mode: if args.merge_words { WordMode::Word } else { WordMode::Token },
    }
}

pub fn build_report(args: &AnalyzeArgs) -> Result<(Vec<AnswerRecord>, SummaryReport), CliError> {
    let records = load_corpus(args)?;
    let report = SummaryReport::build(&records, options(args)).map_err(|e| CliError::config(e.to_string()))?;
    Ok((records, report))
}

fn csv_err(path: &Path, e: csv::Error) -> CliError {
    CliError::io(path, e.into())
}

pub fn write_csvs(dir: &Path, report: &SummaryReport) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;

    let path = dir.join("per_trace.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    for row in &report.per_trace {
        w.serialize(row).map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("histogram.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["bin_lo", "bin_hi", "changed", "unchanged"]).map_err(|e| csv_err(&path, e))?;
    let (ch, un) = (&report.changed_hist, &report.unchanged_hist);
    for k in 0..ch.bins.len() {
        let (lo, hi) = ch.bin_edges(k);
        w.write_record([lo.to_string(), hi.to_string(), ch.bins[k].to_string(), un.bins[k].to_string()])
            .map_err(|e| csv_err(&path, e))?;
    }
    let lo = ch.bin_edges(ch.bins.len()).0;
    w.write_record([lo.to_string(), "inf".into(), ch.overflow.to_string(), un.overflow.to_string()])
        .map_err(|e| csv_err(&path, e))?;
    w.flush().map_err(|e| CliError::io(&path, e))?;

    let path = dir.join("frequencies.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| csv_err(&path, e))?;
    w.write_record(["rank", "token_text", "count"]).map_err(|e| csv_err(&path, e))?;
    for (rank, (text, count)) in report.gated_frequencies.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), text.clone(), count.to_string()])
            .map_err(|e| csv_err(&path, e))?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    Ok(())
}

pub fn run_analyze(args: &AnalyzeArgs) -> Result<(), CliError> {
    let (records, report) = build_report(args)?;
    if let Some(path) = &args.report_out {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer_pretty(&mut out, &report).map_err(|e| CliError::io(path, e.into()))?;
        writeln!(out).and_then(|_| out.flush()).map_err(|e| CliError::io(path, e))?;
    }
    if let Some(dir) = &args.csv_dir {
        write_csvs(dir, &report)?;
    }

    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for (i, (rec, s)) in records.iter().zip(&report.per_trace).enumerate() {
        let line = match &rec.trace {
            Some(t) => session::summary_line(&format!("trace {i}"), t),
            None => format!("trace {i}: source={} tokens={} cfg_usage={:.6}", s.source, s.tokens, s.cfg_usage),
        };
        let _ = writeln!(lock, "{line}");
    }
    let _ = writeln!(
        lock,
        "corpus: traces={} tokens={} cfg_usage={:.6} above_cutoff={} entropy_share_above={:.6}",
        report.traces, report.tokens, report.cfg_usage, report.tokens_above, report.entropy_share_above
    );
    match &report.cohorts {
        Some(c) => {
            let _ = writeln!(
                lock,
                "cohorts: correct_mean={:.6} incorrect_mean={:.6} difference={:.6}",
                c.correct.mean, c.incorrect.mean, c.mean_difference
            );
        }
        None => {
            let _ = writeln!(lock, "cohorts: unavailable ({})", report.cohort_error.as_deref().unwrap_or("no labels"));
        }
    }
    if report.nothing_gated {
        let _ = writeln!(lock, "note: no token in the corpus was gated");
    }
    if report.entropy_approximated {
        let _ = writeln!(lock, "note: some entropies were estimated from truncated log-probabilities");
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn label_forms() {
        let l = parse_labels("correct\nINCORRECT\n\ntrue\n0\n1\nfalse\n", Path::new("l")).unwrap();
        assert_eq!(l, vec![true, false, true, false, true, false]);
        let e = parse_labels("1\nmaybe\n", Path::new("l")).unwrap_err();
        assert!(e.to_string().contains("line 2"));
    }
}
