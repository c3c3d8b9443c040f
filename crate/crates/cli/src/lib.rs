//! Command-line front end: `generate`, `analyze`, `bench` and
//! `export-weights`.

pub mod analyze;
pub mod args;
pub mod bench;
pub mod config;
pub mod error;
pub mod export;
pub mod generate;
pub mod session;

use std::ffi::OsString;

use clap::Parser;

pub use args::{Cli, Command};
pub use error::CliError;

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let args = match config::expand(args) {
        Ok(a) => a,
        Err(e) => return report(e),
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Generate(a) => generate::run_generate(a).map(|_| 0),
        Command::Analyze(a) => analyze::run_analyze(a).map(|_| 0),
        Command::Bench(a) => bench::run_bench(a),
        Command::ExportWeights(a) => export::run_export(a).map(|_| 0),
    };
    match result {
        Ok(0) => 0,
        Ok(code) => {
            eprintln!("error: {}", CliError::Invariant("counters disagree with the cost model".into()));
            code
        }
        Err(e) => report(e),
    }
}

fn report(e: CliError) -> u8 {
    eprintln!("error: {e}");
    e.exit_code()
}
