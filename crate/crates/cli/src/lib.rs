//! Reproducible pipelines behind the `tsce` binary.
//!
//! Every command is a serializable [`Command`]; [`execute`] runs it and
//! returns a [`RunManifest`] recording the resolved configuration, the
//! digest of every file read and written, and timing. Feeding a manifest
//! back to [`rerun`] repeats the command and checks that every output is
//! byte-identical.

mod command;
mod manifest;

use std::fmt;

pub use command::{
    diagram_from_report, execute, CdDiagramArgs, Command, CompareArgs, DataArgs, EnsembleArgs, EvaluateArgs, PlanArgs, SynthArgs,
    TrainArgs, TransferArgs,
};
pub use manifest::{rerun, run_command, FileRecord, IoTrace, RunManifest, RUN_MANIFEST_VERSION};

use tsc_ensemble::Error;

/// Why a command failed: bad invocation or input (exit code 2) or a
/// failure while running (exit code 1).
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Runtime(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for Failure {}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

pub(crate) fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

/// Errors caused by malformed user input are usage errors.
pub(crate) fn input_failure(e: Error) -> Failure {
    match e {
        Error::Format(_) | Error::Parse { .. } | Error::Domain(_) => Failure::Usage(e.to_string()),
        other => Failure::Runtime(other),
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;
