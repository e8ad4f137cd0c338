use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use tsc_ensemble::arch::hyper::MANIFEST_VERSION;
use tsc_ensemble::training::CHECKPOINT_VERSION;
use tsc_ensemble::util::{file_digest, write_atomic};
use tsc_ensemble::Error;

use crate::command::{execute, Command};
use crate::{usage, Failure, Outcome};

pub const RUN_MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileRecord {
    pub path: PathBuf,
    pub sha256: String,
}

/// Files touched by one command, in the order they were read or written.
#[derive(Debug, Default)]
pub struct IoTrace {
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub warnings: Vec<String>,
    pub messages: Vec<String>,
}

impl IoTrace {
    pub fn read(&mut self, path: &Path) -> Result<(), Error> {
        let sha256 = file_digest(path)?;
        if !self.inputs.iter().any(|r| r.path == path) {
            self.inputs.push(FileRecord { path: path.to_path_buf(), sha256 });
        }
        Ok(())
    }

    pub fn wrote(&mut self, path: &Path) -> Result<(), Error> {
        let sha256 = file_digest(path)?;
        self.outputs.retain(|r| r.path != path);
        self.outputs.push(FileRecord { path: path.to_path_buf(), sha256 });
        Ok(())
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        self.warnings.push(msg.into());
    }

    pub fn say(&mut self, msg: impl Into<String>) {
        self.messages.push(msg.into());
    }
}

/// Record of one command run; enough on its own to repeat the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub artifact_versions: BTreeMap<String, u32>,
    pub command: Command,
    pub seeds: Vec<u64>,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
    pub warnings: Vec<String>,
    pub messages: Vec<String>,
    pub wall_clock_seconds: f64,
    pub rerun_of: Option<PathBuf>,
}

impl RunManifest {
    pub(crate) fn run(command: Command) -> Outcome<Self> {
        let start = Instant::now();
        let mut trace = IoTrace::default();
        execute(&command, &mut trace)?;
        Ok(Self {
            schema_version: RUN_MANIFEST_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            artifact_versions: BTreeMap::from([
                ("checkpoint".to_string(), CHECKPOINT_VERSION),
                ("hyperparams".to_string(), MANIFEST_VERSION),
                ("run-manifest".to_string(), RUN_MANIFEST_VERSION),
            ]),
            seeds: command.seeds(),
            command,
            inputs: trace.inputs,
            outputs: trace.outputs,
            warnings: trace.warnings,
            messages: trace.messages,
            wall_clock_seconds: start.elapsed().as_secs_f64(),
            rerun_of: None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<(), Error> {
        write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Outcome<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Failure::Runtime(Error::Io { path: path.to_path_buf(), source: e }))?;
        serde_json::from_str(&text).map_err(|e| usage(format!("{} is not a run manifest: {e}", path.display())))
    }
}

/// Run `command` and return its manifest.
pub fn run_command(command: Command) -> Outcome<RunManifest> {
    RunManifest::run(command)
}

/// Repeat the command recorded in a manifest and require every recorded
/// output to come out byte-identical.
pub fn rerun(path: &Path) -> Outcome<RunManifest> {
    let original = RunManifest::load(path)?;
    let mut again = RunManifest::run(original.command.clone())?;
    again.rerun_of = Some(path.to_path_buf());
    let mut mismatched = Vec::new();
    for old in &original.outputs {
        match again.outputs.iter().find(|r| r.path == old.path) {
            Some(new) if new.sha256 == old.sha256 => {}
            Some(_) => mismatched.push(format!("{} differs", old.path.display())),
            None => mismatched.push(format!("{} was not produced", old.path.display())),
        }
    }
    if !mismatched.is_empty() {
        return Err(Failure::Runtime(Error::State(format!("rerun outputs diverge: {}", mismatched.join("; ")))));
    }
    again.messages.push(format!("all {} outputs match {}", original.outputs.len(), path.display()));
    Ok(again)
}
