use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use lab::{exit, Command};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Cmd {
    GenData,
    TrainGan,
    TrainLsnet,
    Eval,
    Screen,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::GenData => Command::GenData,
            Cmd::TrainGan => Command::TrainGan,
            Cmd::TrainLsnet => Command::TrainLsnet,
            Cmd::Eval => Command::Eval,
            Cmd::Screen => Command::Screen,
        }
    }
}

/// Phantom translation and screening laboratory.
///
/// Exit codes: 0 success, 2 configuration, 3 missing input, 4 numeric
/// failure, 5 data invariant violation. LAB_THREADS caps the worker count.
#[derive(Debug, Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Cmd,
    /// Flat key=value config file; `#` starts a comment.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
    overrides: Vec<String>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { exit::CONFIG } else { exit::OK };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Ok(raw) = std::env::var("LAB_THREADS") {
        let threads = match raw.parse::<usize>() {
            Ok(t) => t,
            Err(_) => {
                eprintln!("error: LAB_THREADS must be a positive integer, got {raw:?}");
                return ExitCode::from(exit::CONFIG as u8);
            }
        };
        if let Err(e) = lab_core::par::init_threads(threads) {
            eprintln!("error: {e}");
            return ExitCode::from(exit::CONFIG as u8);
        }
    }
    match lab::execute(cli.command.into(), cli.config.as_deref(), &cli.overrides) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
