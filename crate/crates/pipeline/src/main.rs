use std::process::ExitCode;

use clap::Parser;
use mtfuse_pipeline::cli::{execute, Cli};

fn main() -> ExitCode {
    // Usage errors go through clap, which exits with status 2.
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
