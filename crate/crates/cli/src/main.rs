mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use crate::args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => commands::run(a),
        Command::Render(a) => commands::render(a),
        Command::Calibrate(a) => commands::calibrate(a),
        Command::ListLayers(a) => commands::list_layers(a),
        Command::Bench(a) => commands::bench(a),
        Command::Fixture(a) => commands::fixture(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("stagegan: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
