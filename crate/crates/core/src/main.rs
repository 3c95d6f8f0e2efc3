use std::process::ExitCode;

use clap::Parser;
use qbeb::cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 3: the numbers failed; 2: the inputs were unusable
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}
