//! `egpssm` command-line tool.
//!
//! Exit codes: 0 success, 1 runtime failure (diagnostic on stderr),
//! 2 bad arguments (usage text).

mod args;
mod commands;
mod config;
mod svg;

use clap::Parser;

use args::{Cli, Command};

fn main() {
    let cli = Cli::parse(); // exits 2 with usage on bad arguments
    let result = match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
