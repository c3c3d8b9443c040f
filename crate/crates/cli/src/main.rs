use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(mti_cli::run(std::env::args_os()))
}
