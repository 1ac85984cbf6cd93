mod args;
mod commands;
mod io;

use std::process::ExitCode;

use clap::Parser;
use netar::NarError;

use args::Cli;

/// Exit codes: 0 success, 1 usage or bad parameter, 2 data, 3 numerical failure.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Nar(NarError),
}

impl From<NarError> for CliError {
    fn from(e: NarError) -> Self {
        CliError::Nar(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Nar(NarError::Io(e))
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Nar(NarError::Csv(e))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Nar(NarError::Json(e))
    }
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Nar(NarError::InvalidParameter(_)) => 1,
            CliError::Nar(e) if e.is_numerical() => 3,
            CliError::Nar(_) => 2,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Nar(e) => write!(f, "{e}"),
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
