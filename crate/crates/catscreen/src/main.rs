use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = catscreen::cli::Cli::parse();
    match catscreen::cli::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
