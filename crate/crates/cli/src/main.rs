use std::process::ExitCode;

use clap::Parser;
use demixgan_cli::{run, Cli};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli.command, &cli.flags) {
        Ok(manifest) => {
            println!("{}: {} artifacts in manifest", manifest.subcommand, manifest.artifacts.len());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
