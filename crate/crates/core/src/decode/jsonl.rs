//! JSON-lines trace format.
//!
//! Each trace is a metadata object, one object per generated token, and a
//! closing object holding the counters:
//!
//! ```text
//! {"source":"mti","model_name":...,"mode":"mti","tau":1.5,...}
//! {"step":0,"token_id":72,"token_text":"H","entropy":5.53,...,"fwd_delta":13}
//! {"totals":{"forwarded_positions_prompt":13,...},"cache":{"cond":40,"uncond":0}}
//! ```
//!
//! Floats use the shortest representation that round-trips exactly.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{CachePeaks, ComputeCounter, DecodeTrace, StepRecord, TraceMetadata};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TotalsLine {
    pub totals: ComputeCounter,
    pub cache: CachePeaks,
}

#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum TraceLine {
    Metadata(TraceMetadata),
    Step(StepRecord),
    Totals(TotalsLine),
}

impl TraceLine {
    /// Classifies one parsed line by its keys.
    pub fn from_value(v: Value) -> Result<Self, String> {
        let obj = v.as_object().ok_or("line is not a JSON object")?;
        let res = if obj.contains_key("step") {
            serde_json::from_value(v).map(TraceLine::Step)
        } else if obj.contains_key("totals") {
            serde_json::from_value(v).map(TraceLine::Totals)
        } else {
            serde_json::from_value(v).map(TraceLine::Metadata)
        };
        res.map_err(|e| e.to_string())
    }
}

pub fn write_trace(out: &mut impl Write, trace: &DecodeTrace) -> std::io::Result<()> {
    out.write_all(trace_to_jsonl(trace).as_bytes())
}

pub fn trace_to_jsonl(trace: &DecodeTrace) -> String {
    let mut s = serde_json::to_string(&trace.metadata).expect("metadata serializes");
    s.push('\n');
    for r in &trace.records {
        s.push_str(&serde_json::to_string(r).expect("record serializes"));
        s.push('\n');
    }
    let totals = TotalsLine {
        totals: trace.totals,
        cache: trace.cache,
    };
    s.push_str(&serde_json::to_string(&totals).expect("totals serialize"));
    s.push('\n');
    s
}

#[derive(Debug, thiserror::Error)]
#[error("line {line}: {message}")]
pub struct TraceParseError {
    pub line: usize,
    pub message: String,
}

/// Reads every trace in a JSON-lines stream produced by [`write_trace`].
/// Line numbers in errors are 1-based.
pub fn read_traces(input: impl BufRead) -> Result<Vec<DecodeTrace>, TraceParseError> {
    let mut traces = Vec::new();
    let mut current: Option<(TraceMetadata, Vec<StepRecord>)> = None;
    for (i, line) in input.lines().enumerate() {
        let lineno = i + 1;
        let err = |message: String| TraceParseError { line: lineno, message };
        let line = line.map_err(|e| err(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| err(e.to_string()))?;
        match TraceLine::from_value(value).map_err(err)? {
            TraceLine::Metadata(m) => {
                if current.is_some() {
                    return Err(err("metadata before previous trace's totals".into()));
                }
                current = Some((m, Vec::new()));
            }
            TraceLine::Step(r) => match current.as_mut() {
                Some((_, records)) => records.push(r),
                None => return Err(err("step record outside a trace".into())),
            },
            TraceLine::Totals(t) => match current.take() {
                Some((metadata, records)) => traces.push(DecodeTrace {
                    metadata,
                    records,
                    totals: t.totals,
                    cache: t.cache,
                }),
                None => return Err(err("totals outside a trace".into())),
            },
        }
    }
    if current.is_some() {
        return Err(TraceParseError {
            line: 0,
            message: "stream ended inside a trace".into(),
        });
    }
    Ok(traces)
}
