use std::process::ExitCode;

use clap::Parser;

use qassa_cli::args::Cli;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match qassa_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("qassa: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
