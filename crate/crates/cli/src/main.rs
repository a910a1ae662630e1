use std::process::ExitCode;

use clap::Parser;
use natpred_cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("natpred: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
