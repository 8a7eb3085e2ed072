use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = archgrad_cli::Cli::parse();
    env_logger::Builder::new()
        .filter_level(if cli.verbose { log::LevelFilter::Info } else { log::LevelFilter::Warn })
        .init();
    archgrad_cli::run(&cli)
}
