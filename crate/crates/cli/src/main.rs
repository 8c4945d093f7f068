mod args;
mod config;
mod error;
mod evaluate;
mod infer;
mod tools;
mod train;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use error::{CliError, CliResult};

fn init_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("DAS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("DAS_THREADS={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> CliResult<()> {
    init_threads()?;
    match cli.command {
        Command::Train(a) => train::run(a),
        Command::CaptionSegments(a) => infer::caption_segments(a),
        Command::Summarize(a) => infer::summarize(a),
        Command::Eval(a) => evaluate::eval(a),
        Command::Gradcheck(a) => tools::gradcheck(a),
        Command::Metrics(a) => evaluate::metrics(a),
        Command::Synth(a) => tools::synth(a),
        Command::Experiment(a) => tools::experiment(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
