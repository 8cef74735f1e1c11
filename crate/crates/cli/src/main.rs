mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use commands::{run, Cli, Outcome};

/// Exit status per error category; 1 is reserved for failed self-checks.
fn exit_code(category: &str) -> u8 {
    match category {
        "usage" => 2,
        "config" => 3,
        "format" => 4,
        "io" => 5,
        "shape" | "data-integrity" | "domain" => 6,
        "capability" => 7,
        _ => 70,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::ChecksFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("somamba: {e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
