//! `bench`: run each mode over the same prompts and check the counters.

use std::fs;
use std::io::Write;
use std::time::{Duration, Instant};

use mti_core::{cost_summary, DecodeTrace, GuidanceMode};
use serde_json::json;

use crate::args::BenchArgs;
use crate::error::CliError;
use crate::session::{self, Plan};

#[derive(Debug, Clone)]
pub struct BenchRun {
    pub mode: GuidanceMode,
    pub prompt_index: usize,
    /// Trace of the first repetition.
    pub trace: DecodeTrace,
    pub walls: Vec<Duration>,
    /// Every repetition produced the same trace.
    pub repeatable: bool,
}

impl BenchRun {
    pub fn median_wall(&self) -> Duration {
        let mut w = self.walls.clone();
        w.sort();
        w[w.len() / 2]
    }
}

pub fn collect_runs(args: &BenchArgs) -> Result<Vec<BenchRun>, CliError> {
    let (model, source) = session::load_model(&args.decode.model)?;
    let prompts = session::prompt_texts(&args.decode)?;
    let base = Plan::new(&args.decode, GuidanceMode::Mti)?;
    let mut runs = Vec::new();
    for &mode in &args.modes {
        let plan = base.with_mode(mode);
        for (i, prompt) in prompts.iter().enumerate() {
            let mut walls = Vec::with_capacity(args.repetitions as usize);
            let mut first: Option<DecodeTrace> = None;
            let mut repeatable = true;
            for _ in 0..args.repetitions {
                let start = Instant::now();
                let trace = plan.run(&model, &source, prompt)?;
                walls.push(start.elapsed());
                match &first {
                    Some(f) => repeatable &= *f == trace,
                    None => first = Some(trace),
                }
            }
            runs.push(BenchRun {
                mode,
                prompt_index: i,
                trace: first.expect("at least one repetition"),
                walls,
                repeatable,
            });
        }
    }
    Ok(runs)
}

/// Every disagreement between the counters, the closed-form cost model and
/// the cache-length bounds. Empty means the run is consistent.
pub fn evaluate(runs: &[BenchRun]) -> Vec<String> {
    let mut bad = Vec::new();
    for r in runs {
        let tag = format!("{} prompt {}", r.mode, r.prompt_index);
        if !r.repeatable {
            bad.push(format!("{tag}: repetitions produced different traces"));
        }
        let c = cost_summary(&r.trace);
        if !c.internally_consistent {
            bad.push(format!("{tag}: per-step deltas, interventions and totals disagree"));
        }
        if c.measured_total != c.expected_total {
            bad.push(format!(
                "{tag}: forwarded {} positions, closed form gives {}",
                c.measured_total, c.expected_total
            ));
        }
        let (p, t, n) = (c.prompt_len, c.generated, c.neg_len);
        let (cond, uncond) = (c.peak_cache_cond, c.peak_cache_uncond);
        let ok = match r.mode {
            GuidanceMode::Direct => cond == p + t && uncond == 0,
            GuidanceMode::Vanilla => cond == p + t && uncond == n + t,
            GuidanceMode::Mti => {
                let upper = if c.interventions == 0 { p + t } else { p + t + n };
                cond >= p + t && cond <= upper && uncond == 0 && (c.interventions > 0 || c.measured_branch == 0)
            }
        };
        if !ok {
            bad.push(format!("{tag}: peak caches cond={cond} uncond={uncond} out of bounds for P={p} T={t} n={n}"));
        }
    }

    // Cross-mode checks on the same prompt.
    for m in runs.iter().filter(|r| r.mode == GuidanceMode::Mti) {
        let Some(d) = runs.iter().find(|r| r.mode == GuidanceMode::Direct && r.prompt_index == m.prompt_index) else {
            continue;
        };
        let n = m.trace.metadata.neg_prompt_tokens.len();
        if m.trace.records.len() == d.trace.records.len() && m.trace.cache.cond > d.trace.cache.cond + n {
            bad.push(format!(
                "mti prompt {}: peak cache {} exceeds direct's {} by more than {n}",
                m.prompt_index, m.trace.cache.cond, d.trace.cache.cond
            ));
        }
        if m.trace.metadata.tau.is_infinite() && m.trace.generated_tokens() != d.trace.generated_tokens() {
            bad.push(format!("mti prompt {}: tau=inf output differs from direct", m.prompt_index));
        }
    }
    bad
}

/// Exit status for a set of violations: 0 when there are none.
pub fn exit_status(violations: &[String]) -> u8 {
    if violations.is_empty() {
        0
    } else {
        CliError::Invariant(String::new()).exit_code()
    }
}

fn report_json(runs: &[BenchRun], violations: &[String]) -> serde_json::Value {
    let rows: Vec<_> = runs
        .iter()
        .map(|r| {
            let c = cost_summary(&r.trace);
            json!({
                "mode": r.mode,
                "prompt_index": r.prompt_index,
                "tokens": c.generated,
                "forwarded": c.measured_total,
                "expected": c.expected_total,
                "generation": c.measured_generation,
                "branch": c.measured_branch,
                "interventions": c.interventions,
                "peak_cache_cond": c.peak_cache_cond,
                "peak_cache_uncond": c.peak_cache_uncond,
                "wall_seconds": r.walls.iter().map(Duration::as_secs_f64).collect::<Vec<_>>(),
            })
        })
        .collect();
    json!({ "runs": rows, "violations": violations })
}

pub fn run_bench(args: &BenchArgs) -> Result<u8, CliError> {
    let runs = collect_runs(args)?;
    let violations = evaluate(&runs);

    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for r in &runs {
        let c = cost_summary(&r.trace);
        let _ = writeln!(
            out,
            "{:<7} prompt={} tokens={} forwarded={} expected={} branch={} peak_cond={} peak_uncond={} wall_median={:.3}ms",
            r.mode.as_str(),
            r.prompt_index,
            c.generated,
            c.measured_total,
            c.expected_total,
            c.measured_branch,
            c.peak_cache_cond,
            c.peak_cache_uncond,
            r.median_wall().as_secs_f64() * 1e3
        );
    }
    let direct_total: usize = runs.iter().filter(|r| r.mode == GuidanceMode::Direct).map(|r| r.trace.totals.total()).sum();
    for &mode in &args.modes {
        let mine: Vec<_> = runs.iter().filter(|r| r.mode == mode).collect();
        let total: usize = mine.iter().map(|r| r.trace.totals.total()).sum();
        let wall: f64 = mine.iter().map(|r| r.median_wall().as_secs_f64()).sum();
        let ratio = if direct_total > 0 {
            format!(" ({:.3}x direct)", total as f64 / direct_total as f64)
        } else {
            String::new()
        };
        let _ = writeln!(out, "total {:<7} forwarded={total}{ratio} wall={:.3}ms", mode.as_str(), wall * 1e3);
    }
    for v in &violations {
        let _ = writeln!(out, "violation: {v}");
    }
    let _ = writeln!(out, "{}", if violations.is_empty() { "counters match the cost model" } else { "counter check FAILED" });

    if let Some(path) = &args.report_out {
        let text = serde_json::to_string_pretty(&report_json(&runs, &violations)).expect("report serializes");
        fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))?;
    }
    Ok(exit_status(&violations))
}
