use std::process::ExitCode;

use clap::Parser;
use pseudoreg::cli::{run, Cli};

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(manifest) if manifest.converged => ExitCode::SUCCESS,
        Ok(manifest) => {
            for note in &manifest.notes {
                eprintln!("pseudoreg: {note}");
            }
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("pseudoreg: {e}");
            ExitCode::FAILURE
        }
    }
}
