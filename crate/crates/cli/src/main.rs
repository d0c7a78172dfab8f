use std::process::ExitCode;

use clap::Parser;

mod args;
mod commands;
mod config;

use args::{Cli, Command};

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Pretrain(a) => commands::pretrain_cmd(a),
        Command::Finetune(a) => commands::finetune_cmd(a),
        Command::Score(a) => commands::score(a),
        Command::Explain(a) => commands::explain(a),
        Command::Benchmark(a) => commands::benchmark(a),
        Command::Render(a) => commands::render(a),
        Command::Serve(a) => commands::serve(a),
    }
}

fn main() -> ExitCode {
    let argv = match config::with_defaults(std::env::args_os().collect()) {
        Ok(argv) => argv,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    // clap exits with 2 on usage errors and 0 for --help / --version
    let cli = Cli::try_parse_from(argv).unwrap_or_else(|e| e.exit());
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
