use std::fs::File;
use std::io::{BufWriter, Write};

use mti_core::decode::write_trace;
use mti_core::DecodeTrace;
use rayon::prelude::*;

use crate::args::GenerateArgs;
use crate::error::CliError;
use crate::session::{self, Plan};

/// Decodes every prompt (concurrently, one session each) and returns the
/// traces in input order.
pub fn generate_traces(args: &GenerateArgs) -> Result<Vec<DecodeTrace>, CliError> {
    let (model, source) = session::load_model(&args.decode.model)?;
    let prompts = session::prompt_texts(&args.decode)?;
    let plan = Plan::new(&args.decode, args.mode)?;
    let results: Vec<Result<DecodeTrace, CliError>> = prompts.par_iter().map(|p| plan.run(&model, &source, p)).collect();
    results.into_iter().collect()
}

pub fn run_generate(args: &GenerateArgs) -> Result<(), CliError> {
    let traces = generate_traces(args)?;
    if let Some(path) = &args.trace_out {
        let file = File::create(path).map_err(|e| CliError::io(path, e))?;
        let mut out = BufWriter::new(file);
        for t in &traces {
            write_trace(&mut out, t).map_err(|e| CliError::io(path, e))?;
        }
        out.flush().map_err(|e| CliError::io(path, e))?;
    }
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    for (i, t) in traces.iter().enumerate() {
        let _ = writeln!(lock, "{}", session::summary_line(&format!("trace {i}"), t));
    }
    Ok(())
}
