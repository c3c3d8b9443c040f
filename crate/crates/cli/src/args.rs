use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use mti_core::guidance::{DEFAULT_NEG_PROMPT, DEFAULT_OMEGA, DEFAULT_TAU};
use mti_core::{GuidanceMode, SamplerKind};

const LONG_ABOUT: &str = "\
Entropy-gated classifier-free guidance over a small byte-level transformer.

Token entropy is H = -sum_i p_i ln p_i over the softmax of the conditional
logits, measured in nats. It is never negative: 0 for a one-hot distribution,
ln(259) ~ 5.557 for a uniform one. In mti mode a step is guided only when
H > tau, so --tau 0 guides every step with positive entropy and --tau inf
never guides.";

#[derive(Debug, Parser)]
#[command(name = "mti", version, about = "Entropy-gated guidance decoding and trace analytics", long_about = LONG_ABOUT)]
#[command(args_override_self = true, propagate_version = true)]
pub struct Cli {
    /// Flat key=value file of flag defaults; flags on the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode prompts and write JSON-lines traces.
    #[command(long_about = LONG_ABOUT, args_override_self = true)]
    Generate(GenerateArgs),
    /// Summarize one or more trace files.
    #[command(args_override_self = true)]
    Analyze(AnalyzeArgs),
    /// Run every mode over the same prompts and check the compute counters.
    #[command(args_override_self = true)]
    Bench(BenchArgs),
    /// Write the weights of a seeded model to a file.
    #[command(args_override_self = true)]
    ExportWeights(ExportArgs),
}

#[derive(Debug, Clone, Args)]
#[group(id = "model_source", required = true, multiple = false)]
pub struct ModelSourceArgs {
    /// Initialize the model from this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Load the model from a weight file.
    #[arg(long, value_name = "PATH")]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    #[command(flatten)]
    pub source: ModelSourceArgs,
    /// Multiply the token embedding by this factor after loading. Larger
    /// values sharpen the output distribution.
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    pub embed_scale: f64,
}

#[derive(Debug, Clone, Args)]
#[group(id = "prompt_source", required = true, multiple = false)]
pub struct PromptArgs {
    /// A single prompt.
    #[arg(long)]
    pub prompt: Option<String>,
    /// UTF-8 file with one prompt per line.
    #[arg(long, value_name = "PATH")]
    pub prompts_file: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct GuidanceArgs {
    /// Entropy threshold in nats (>= 0, or "inf"). A step is guided when H > tau.
    #[arg(long, default_value_t = DEFAULT_TAU, value_parser = parse_tau)]
    pub tau: f64,
    /// Guidance scale; 1 reproduces the conditional logits.
    #[arg(long, default_value_t = DEFAULT_OMEGA, value_parser = parse_finite)]
    pub omega: f64,
    /// Text of the negative prompt.
    #[arg(long, default_value = DEFAULT_NEG_PROMPT)]
    pub neg_prompt: String,
}

#[derive(Debug, Clone, Args)]
pub struct SamplerArgs {
    #[arg(long, default_value_t = SamplerKind::Greedy)]
    pub sampler: SamplerKind,
    #[arg(long, default_value_t = 0.6)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    #[arg(long, default_value_t = 20)]
    pub top_k: usize,
    /// Seed of the sampling generator.
    #[arg(long, default_value_t = 0)]
    pub sample_seed: u64,
}

#[derive(Debug, Clone, Args)]
pub struct DecodeArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub prompts: PromptArgs,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
    #[command(flatten)]
    pub sampler: SamplerArgs,
    #[arg(long, default_value_t = 64)]
    pub max_tokens: usize,
    /// Stop once the output ends with this text. Repeatable.
    #[arg(long, value_name = "TEXT")]
    pub stop: Vec<String>,
}

#[derive(Debug, Clone, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    #[arg(long, default_value_t = GuidanceMode::Mti)]
    pub mode: GuidanceMode,
    /// Trace file, overwritten on each run.
    #[arg(long, value_name = "PATH")]
    pub trace_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct AnalyzeArgs {
    /// Trace file (this tool's output or the external ingest schema). Repeatable.
    #[arg(long = "input", short = 'i', value_name = "PATH", required = true)]
    pub inputs: Vec<PathBuf>,
    /// One label per line (correct/incorrect, true/false, 1/0), in corpus order.
    #[arg(long, value_name = "PATH")]
    pub labels: Option<PathBuf>,
    /// Write the full report as JSON here.
    #[arg(long, value_name = "PATH")]
    pub report_out: Option<PathBuf>,
    /// Write per_trace.csv, histogram.csv and frequencies.csv into this directory.
    #[arg(long, value_name = "DIR")]
    pub csv_dir: Option<PathBuf>,
    /// Entropy cutoff in nats separating high- from low-entropy tokens.
    #[arg(long, default_value_t = mti_core::analysis::DEFAULT_CUTOFF, value_parser = parse_finite)]
    pub cutoff: f64,
    #[arg(long, default_value_t = mti_core::analysis::DEFAULT_BIN_WIDTH, value_parser = parse_positive)]
    pub bin_width: f64,
    /// Upper edge of the last regular histogram bin; defaults to ln(259).
    #[arg(long, value_parser = parse_positive)]
    pub hist_upper: Option<f64>,
    #[arg(long, default_value_t = 20)]
    pub top_n: usize,
    /// Merge consecutive gated tokens into whitespace-delimited words.
    #[arg(long)]
    pub merge_words: bool,
}

#[derive(Debug, Clone, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub decode: DecodeArgs,
    /// Modes to run, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = GuidanceMode::ALL)]
    pub modes: Vec<GuidanceMode>,
    /// Timed repetitions per mode and prompt.
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u32).range(1..))]
    pub repetitions: u32,
    /// Write per-run results as JSON here.
    #[arg(long, value_name = "PATH")]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
}

pub fn parse_tau(s: &str) -> Result<f64, String> {
    match s.trim() {
        "inf" | "+inf" | "infinity" => Ok(f64::INFINITY),
        t => match t.parse::<f64>() {
            Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
            Ok(v) => Err(format!("tau must be >= 0 or \"inf\", got {v}")),
            Err(_) => Err(format!("tau must be a number or \"inf\", got {s:?}")),
        },
    }
}

fn parse_finite(s: &str) -> Result<f64, String> {
    match s.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(format!("expected a finite number, got {s:?}")),
    }
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match parse_finite(s)? {
        v if v > 0.0 => Ok(v),
        v => Err(format!("expected a positive number, got {v}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn command_is_well_formed() {
        Cli::command().debug_assert();
    }

    #[test]
    fn tau_parsing() {
        assert_eq!(parse_tau("inf"), Ok(f64::INFINITY));
        assert_eq!(parse_tau("0"), Ok(0.0));
        assert_eq!(parse_tau("1.5"), Ok(1.5));
        assert!(parse_tau("-0.1").is_err());
        assert!(parse_tau("NaN").is_err());
        assert!(parse_tau("abc").is_err());
    }

    #[test]
    fn later_flags_override_earlier() {
        let cli = Cli::try_parse_from(["mti", "generate", "--seed", "1", "--prompt", "a", "--tau", "0.5", "--tau", "2"]).unwrap();
        let Command::Generate(g) = cli.command else { panic!() };
        assert_eq!(g.decode.guidance.tau, 2.0);
    }

    #[test]
    fn model_source_is_exclusive_and_required() {
        assert!(Cli::try_parse_from(["mti", "generate", "--prompt", "a"]).is_err());
        assert!(Cli::try_parse_from(["mti", "generate", "--seed", "1", "--weights", "w", "--prompt", "a"]).is_err());
    }
}
