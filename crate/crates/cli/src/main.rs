//! `vocabslice` command-line pipeline.
//!
//! Exit codes: 0 success, 2 configuration or usage error, 3 parse error,
//! 4 integrity error, 5 invalid input, 6 I/O error, 7 tolerance exceeded
//! on the profiling corpus.

mod cli;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::Parser;
use vocabslice::{Error, ErrorKind};

use crate::cli::{Cli, Command};
use crate::commands::Failure;
use crate::config::Context;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Parse => 3,
        ErrorKind::Integrity => 4,
        ErrorKind::Input => 5,
        ErrorKind::Io => 6,
    }
}

fn run(cli: &Cli) -> Result<(), Failure> {
    let ctx = Context::new(&cli.global)?;
    let report = match &cli.command {
        Command::Profile(a) => commands::profile_cmd(&ctx, a)?,
        Command::BuildStatic(a) => commands::build_static_cmd(&ctx, a)?,
        Command::Select(a) => commands::select_cmd(&ctx, a)?,
        Command::Evaluate(a) => match commands::evaluate_cmd(&ctx, a) {
            Err(Failure::ToleranceExceeded(report, why)) => {
                commands::emit(&report, ctx.format);
                return Err(Failure::ToleranceExceeded(report, why));
            }
            other => other?,
        },
        Command::Simulate(a) => commands::simulate_cmd(&ctx, a)?,
        Command::Report(a) => commands::report_cmd(&ctx, a)?,
    };
    commands::emit(&report, ctx.format);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::ToleranceExceeded(_, why)) => {
            eprintln!("error: tolerance exceeded: {why}");
            ExitCode::from(7)
        }
    }
}
