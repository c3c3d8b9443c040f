//! Reader for JSON-lines answer logs.
//!
//! Accepted line kinds, told apart by their keys:
//!
//! * metadata: `{"source", "model_name", "correct"?, "vocab_size"?}` starts a
//!   new answer. Metadata written by this crate's trace emitter (it carries
//!   `"mode"`) is parsed in full so the original trace is recovered.
//! * token: `{"step", "token_text", "entropy"?, "logprobs"?, "gated"?,
//!   "changed"?, "tail_slots"?}`. One of `entropy` or `logprobs` is
//!   required; `logprobs` is an array of `[token_text, logprob]`.
//! * totals: `{"totals": ...}` closes a trace from this crate's emitter.
//!
//! When only truncated top-k logprobs are present the entropy is
//! approximated by spreading the missing mass `1 - q` uniformly over `R`
//! tail slots (`tail_slots`, else `vocab_size - k`, else a single bucket)
//! and the record is flagged.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde_json::{Map, Value};
use thiserror::Error;

use super::{AnswerRecord, TokenStat};
use crate::decode::{DecodeTrace, StepRecord, TraceLine, TraceMetadata};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn schema(line: usize, message: impl Into<String>) -> IngestError {
    IngestError::Schema {
        line,
        message: message.into(),
    }
}

/// Entropy estimate from top-k probabilities `p` with the residual mass
/// spread evenly over `tail_slots` unseen tokens:
/// `-sum p ln p - (1 - q) ln((1 - q) / R)` where `q = sum p`.
pub fn residual_entropy(probs: &[f64], tail_slots: usize) -> f64 {
    let q: f64 = probs.iter().sum();
    let head: f64 = probs.iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
    let rest = 1.0 - q;
    if rest <= 0.0 || tail_slots == 0 {
        return head;
    }
    head - rest * (rest / tail_slots as f64).ln()
}

pub fn ingest_external(path: impl AsRef<Path>) -> Result<Vec<AnswerRecord>, IngestError> {
    ingest_reader(BufReader::new(File::open(path)?))
}

struct Pending {
    record: AnswerRecord,
    vocab_size: Option<usize>,
    own: Option<(TraceMetadata, Vec<StepRecord>)>,
}

pub fn ingest_reader(input: impl BufRead) -> Result<Vec<AnswerRecord>, IngestError> {
    let mut out = Vec::new();
    let mut pending: Option<Pending> = None;

    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| schema(lineno, format!("invalid JSON: {e}")))?;
        let Some(obj) = value.as_object() else {
            return Err(schema(lineno, "expected a JSON object"));
        };

        if obj.contains_key("totals") {
            let Some(mut p) = pending.take() else {
                return Err(schema(lineno, "totals line outside an answer"));
            };
            let Some((metadata, records)) = p.own.take() else {
                return Err(schema(lineno, "totals line in an externally produced answer"));
            };
            let TraceLine::Totals(t) = TraceLine::from_value(value).map_err(|e| schema(lineno, e))? else {
                unreachable!("classified by key");
            };
            p.record.trace = Some(DecodeTrace {
                metadata,
                records,
                totals: t.totals,
                cache: t.cache,
            });
            out.push(p.record);
        } else if obj.contains_key("step") {
            let Some(p) = pending.as_mut() else {
                return Err(schema(lineno, "token record before any metadata line"));
            };
            let tok = parse_token(obj, lineno, p.vocab_size, &mut p.record.entropy_approximated)?;
            if let Some((_, records)) = p.own.as_mut() {
                let r: StepRecord = serde_json::from_value(value).map_err(|e| schema(lineno, e.to_string()))?;
                records.push(r);
            }
            p.record.tokens.push(tok);
        } else {
            if let Some(p) = pending.take() {
                if p.own.is_some() {
                    return Err(schema(lineno, "new answer before the previous trace's totals line"));
                }
                out.push(p.record);
            }
            pending = Some(parse_metadata(obj, value.clone(), lineno)?);
        }
    }
    if let Some(p) = pending {
        if p.own.is_some() {
            return Err(schema(0, "input ended before the trace's totals line"));
        }
        out.push(p.record);
    }
    Ok(out)
}

fn required_str(obj: &Map<String, Value>, key: &str, line: usize) -> Result<String, IngestError> {
    match obj.get(key) {
        Some(Value::String(s)) => Ok(s.clone()),
        Some(_) => Err(schema(line, format!("key {key:?} must be a string"))),
        None => Err(schema(line, format!("missing required key {key:?}"))),
    }
}

fn optional_bool(obj: &Map<String, Value>, key: &str, line: usize) -> Result<Option<bool>, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(Value::Bool(b)) => Ok(Some(*b)),
        Some(_) => Err(schema(line, format!("key {key:?} must be a boolean"))),
    }
}

fn optional_count(obj: &Map<String, Value>, key: &str, line: usize) -> Result<Option<usize>, IngestError> {
    match obj.get(key) {
        None | Some(Value::Null) => Ok(None),
        Some(v) => v
            .as_u64()
            .map(|n| Some(n as usize))
            .ok_or_else(|| schema(line, format!("key {key:?} must be a non-negative integer"))),
    }
}

fn parse_metadata(obj: &Map<String, Value>, value: Value, line: usize) -> Result<Pending, IngestError> {
    let source = required_str(obj, "source", line)?;
    let model_name = required_str(obj, "model_name", line)?;
    let correct = optional_bool(obj, "correct", line)?;
    let vocab_size = optional_count(obj, "vocab_size", line)?;
    let own = if obj.contains_key("mode") {
        let m: TraceMetadata = serde_json::from_value(value).map_err(|e| schema(line, format!("trace metadata: {e}")))?;
        Some((m, Vec::new()))
    } else {
        None
    };
    Ok(Pending {
        record: AnswerRecord {
            source,
            model_name,
            correct,
            tokens: Vec::new(),
            entropy_approximated: false,
            trace: None,
        },
        vocab_size,
        own,
    })
}

fn parse_token(
    obj: &Map<String, Value>,
    line: usize,
    vocab_size: Option<usize>,
    approximated: &mut bool,
) -> Result<TokenStat, IngestError> {
    let step = optional_count(obj, "step", line)?.ok_or_else(|| schema(line, "missing required key \"step\""))?;
    let token_text = required_str(obj, "token_text", line)?;
    let gated = optional_bool(obj, "gated", line)?.unwrap_or(false);
    let changed = optional_bool(obj, "changed", line)?.unwrap_or(false);

    let entropy = match (obj.get("entropy"), obj.get("logprobs")) {
        (Some(v), _) if !v.is_null() => {
            let h = v.as_f64().ok_or_else(|| schema(line, "key \"entropy\" must be a number"))?;
            if !(h.is_finite() && h >= 0.0) {
                return Err(schema(line, format!("entropy {h} must be finite and non-negative")));
            }
            h
        }
        (_, Some(Value::Array(items))) => {
            let mut probs = Vec::with_capacity(items.len());
            for item in items {
                let lp = item
                    .as_array()
                    .filter(|pair| pair.len() == 2 && pair[0].is_string())
                    .and_then(|pair| pair[1].as_f64())
                    .ok_or_else(|| schema(line, "logprobs entries must be [token_text, logprob]"))?;
                if lp > 0.0 || !lp.is_finite() {
                    return Err(schema(line, format!("logprob {lp} must be finite and <= 0")));
                }
                probs.push(lp.exp());
            }
            if probs.iter().sum::<f64>() > 1.0 + 1e-6 {
                return Err(schema(line, "logprobs cover more than the full probability mass"));
            }
            let tail = optional_count(obj, "tail_slots", line)?
                .or_else(|| vocab_size.map(|v| v.saturating_sub(probs.len())))
                .unwrap_or(1);
            *approximated = true;
            residual_entropy(&probs, tail)
        }
        (_, Some(_)) => return Err(schema(line, "key \"logprobs\" must be an array")),
        _ => return Err(schema(line, "token record needs \"entropy\" or \"logprobs\"")),
    };
    Ok(TokenStat {
        step,
        token_text,
        entropy,
        gated,
        changed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ingest(s: &str) -> Result<Vec<AnswerRecord>, IngestError> {
        ingest_reader(s.as_bytes())
    }

    #[test]
    fn external_with_entropies() {
        let s = r#"{"source":"vllm","model_name":"m","correct":true}
{"step":0,"token_text":"so","entropy":0.2,"gated":false}
{"step":1,"token_text":"if","entropy":1.7,"gated":true,"changed":true}
{"source":"vllm","model_name":"m","correct":false}
{"step":0,"token_text":"a","entropy":0.4}
"#;
        let recs = ingest(s).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].correct, Some(true));
        assert_eq!(recs[0].tokens[1].token_text, "if");
        assert!(recs[0].tokens[1].gated && recs[0].tokens[1].changed);
        assert!(!recs[1].tokens[0].gated);
        assert!(!recs[0].entropy_approximated);
    }

    #[test]
    fn missing_entropy_and_logprobs_names_line() {
        let s = "{\"source\":\"x\",\"model_name\":\"m\"}\n{\"step\":0,\"token_text\":\"a\",\"entropy\":0.1}\n{\"step\":1,\"token_text\":\"b\"}\n";
        match ingest(s) {
            Err(IngestError::Schema { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("entropy"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn missing_required_keys() {
        let s = "{\"model_name\":\"m\"}\n";
        assert!(matches!(ingest(s), Err(IngestError::Schema { line: 1, .. })));
        let s = "{\"source\":\"x\",\"model_name\":\"m\"}\n{\"step\":0,\"entropy\":0.1}\n";
        assert!(matches!(ingest(s), Err(IngestError::Schema { line: 2, .. })));
        let s = "{\"step\":0,\"token_text\":\"a\",\"entropy\":0.1}\n";
        assert!(matches!(ingest(s), Err(IngestError::Schema { line: 1, .. })));
    }

    #[test]
    fn residual_entropy_hand_computation() {
        // Top-2 probabilities 0.5 and 0.3, residual 0.2 over 8 slots:
        // -(0.5 ln 0.5 + 0.3 ln 0.3) - 0.2 ln(0.2/8)
        let hand = -(0.5f64 * 0.5f64.ln() + 0.3 * 0.3f64.ln()) - 0.2 * (0.025f64).ln();
        let s = format!(
            "{{\"source\":\"x\",\"model_name\":\"m\"}}\n{{\"step\":0,\"token_text\":\"a\",\"logprobs\":[[\"a\",{}],[\"b\",{}]],\"tail_slots\":8}}\n",
            0.5f64.ln(),
            0.3f64.ln()
        );
        let recs = ingest(&s).unwrap();
        assert!(recs[0].entropy_approximated);
        assert!((recs[0].tokens[0].entropy - hand).abs() < 1e-12);
        assert!((residual_entropy(&[0.5, 0.3], 8) - hand).abs() < 1e-15);
    }

    #[test]
    fn tail_slots_from_vocab_size() {
        let s = format!(
            "{{\"source\":\"x\",\"model_name\":\"m\",\"vocab_size\":10}}\n{{\"step\":0,\"token_text\":\"a\",\"logprobs\":[[\"a\",{}]]}}\n",
            0.6f64.ln()
        );
        let h = ingest(&s).unwrap()[0].tokens[0].entropy;
        assert!((h - residual_entropy(&[0.6], 9)).abs() < 1e-12);
    }

    #[test]
    fn full_mass_has_no_residual() {
        assert!((residual_entropy(&[0.5, 0.5], 100) - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn bad_lines() {
        let s = "{\"source\":\"x\",\"model_name\":\"m\"}\nnot json\n";
        assert!(matches!(ingest(s), Err(IngestError::Schema { line: 2, .. })));
        let s = "{\"source\":\"x\",\"model_name\":\"m\"}\n{\"step\":0,\"token_text\":\"a\",\"logprobs\":[[\"a\",0.5]]}\n";
        assert!(matches!(ingest(s), Err(IngestError::Schema { line: 2, .. })));
    }
}
