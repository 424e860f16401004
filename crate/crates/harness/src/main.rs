use std::process::ExitCode;

use clap::Parser;
use grip_harness::cli::{execute, Cli, ErrorRecord};

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(lines) => {
            for l in lines {
                println!("{l}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let record = serde_json::to_string(&ErrorRecord::from(&e)).expect("error record serializes");
            eprintln!("{record}");
            ExitCode::FAILURE
        }
    }
}
