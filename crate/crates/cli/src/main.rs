//! `scoredrive` command-line interface.
//!
//! Exit codes: 0 on success, 1 on usage, validation or domain errors, 2 on I/O errors.

mod args;
mod commands;
mod table;

use std::path::Path;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Core(#[from] scoredrive::Error),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn io(path: &Path, err: std::io::Error) -> Self {
        CliError::Io(format!("{}: {err}", path.display()))
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Io(_) => 2,
            _ => 1,
        }
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::Filter(a) => commands::filter(a).map(|_| true),
        Command::VerifyIdentities(a) => commands::verify(a),
        Command::ExpansionStudy(a) => commands::expansion(a).map(|_| true),
        Command::Simulate(a) => commands::simulate_cmd(a).map(|_| true),
        Command::Fit(a) => commands::fit(a).map(|_| true),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
