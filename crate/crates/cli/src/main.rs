mod args;
mod commands;
mod run_dir;

use std::process::ExitCode;

use anyhow::Result;
use clap::Parser;
use clap::error::ErrorKind;

use args::{Cli, Command};

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

/// Bad input the user can fix by changing arguments or config.
fn is_validation(e: &anyhow::Error) -> bool {
    use vein_origin::Error as E;
    e.chain().any(|c| {
        matches!(
            c.downcast_ref::<E>(),
            Some(E::UnknownArchitecture(_) | E::UnknownSensor(_) | E::InvalidConfig(_) | E::SizeTooSmall { .. } | E::TileError { .. })
        )
    })
}

fn run(cli: Cli) -> Result<u8> {
    if cli.deterministic {
        rayon::ThreadPoolBuilder::new().num_threads(1).build_global()?;
    }
    match &cli.command {
        Command::Synth(a) => commands::synth(a).map(|_| 0),
        Command::Ingest(a) => commands::ingest(a).map(|errors| if errors == 0 { 0 } else { EXIT_RUNTIME }),
        Command::Stats(a) => commands::stats(a).map(|_| 0),
        Command::Preprocess(a) => commands::preprocess(a).map(|_| 0),
        Command::Split(a) => commands::split(a).map(|_| 0),
        Command::Params(a) => commands::params(a).map(|_| 0),
        Command::Train(a) => commands::train(a).map(|_| 0),
        Command::Eval(a) => commands::eval(a).map(|_| 0),
        Command::Report(a) => commands::report(a).map(|_| 0),
        Command::Pipeline(a) => commands::pipeline(a).map(|_| 0),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_VALIDATION),
            };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_validation(&e) { EXIT_VALIDATION } else { EXIT_RUNTIME })
        }
    }
}
