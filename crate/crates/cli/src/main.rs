//! `qdfarm`: batch front-end for simulation, analysis and statistics of
//! quantum-dot farms.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::{Cli, Usage};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<Usage>() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
