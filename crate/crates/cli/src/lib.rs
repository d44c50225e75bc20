//! The `forge` command line. [`run_cli`] parses arguments, dispatches to
//! the core library and maps failures onto exit codes: 0 on success, 1 when
//! an input or output fails validation, 2 on usage errors.

mod args;
mod commands;
mod settings;

use std::ffi::OsString;

use clap::{CommandFactory, Parser};
use thiserror::Error;

use forge_core::experiment::ExperimentError;
use forge_core::flow::FlowError;
use forge_core::grounding::GroundingError;
use forge_core::io::IoError;
use forge_core::planning::PlanningError;
use forge_core::spatial::SpatialError;

pub use args::{Cli, Verb};
pub use settings::{parse_matrix, Matrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    /// Input or output data that fails its checks.
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(IoError),
    #[error(transparent)]
    Grounding(#[from] GroundingError),
    #[error(transparent)]
    Spatial(#[from] SpatialError),
    #[error(transparent)]
    Planning(#[from] PlanningError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
}

impl From<IoError> for CliError {
    fn from(e: IoError) -> Self {
        match e {
            IoError::Config(m) => CliError::Usage(m),
            other => CliError::Io(other),
        }
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Experiment(ExperimentError::UnknownVariant(_)) => EXIT_USAGE,
            CliError::Experiment(ExperimentError::InvalidConfig(_)) => EXIT_USAGE,
            CliError::Planning(PlanningError::UnknownAgent(_)) => EXIT_USAGE,
            _ => EXIT_INVALID,
        }
    }
}

/// Run one invocation; `argv[0]` is the program name.
pub fn run_cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let command: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let verb = cli.verb.name();
    match commands::dispatch(cli.verb, command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("forge {verb}: {e}");
            let code = e.exit_code();
            if code == EXIT_USAGE {
                if let Some(sub) = Cli::command().find_subcommand_mut(verb) {
                    eprintln!("\n{}", sub.render_help());
                }
            }
            code
        }
    }
}
