//! `swarmfield`: run scenarios headless, replay logs, summarize reports and
//! serve the gateway.
//!
//! Exit codes: 0 when the report passes, 1 when it does not, 2 for scenario,
//! configuration, log or I/O errors (reported as one JSON object on stderr).

mod args;
mod commands;
mod error;

use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = args::Cli::parse();
    match commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(2)
        }
    }
}
