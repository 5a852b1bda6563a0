mod args;
mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use commands::Usage;

fn run(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train_cmd(a),
        Command::NsetFinetune(a) => commands::nset_cmd(a),
        Command::Decode(a) => commands::decode_cmd(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Average(a) => commands::average_cmd(a),
        Command::CountParams(a) => commands::count_cmd(a),
    }
}

fn main() -> ExitCode {
    let argv = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("asrbridge {}: {e:#}", cli.command.name());
            ExitCode::from(if e.is::<Usage>() { 1 } else { 2 })
        }
    }
}
