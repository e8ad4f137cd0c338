//! Ensemble manifest: a name plus the checkpoint files of its members.
//!
//! ```text
//! # comments and blank lines are ignored
//! name = NNE
//! checkpoint = runs/Coffee-fcn-seed0.tsce
//! checkpoint = runs/Coffee-resnet-seed0.tsce
//! ```
//!
//! Relative checkpoint paths are resolved against the manifest's directory.

use std::path::{Path, PathBuf};

use super::EnsembleSpec;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::training::load_checkpoint;
use crate::util::write_atomic;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleManifest {
    pub name: String,
    pub checkpoints: Vec<PathBuf>,
}

impl EnsembleManifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut name = None;
        let mut checkpoints = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .map(|(k, v)| (k.trim(), v.trim()))
                .ok_or_else(|| Error::Parse { line: i + 1, msg: "expected key = value".into() })?;
            match key {
                "name" if name.is_none() => name = Some(value.to_string()),
                "name" => return Err(Error::Parse { line: i + 1, msg: "name given twice".into() }),
                "checkpoint" => checkpoints.push(base.join(value)),
                other => return Err(Error::Parse { line: i + 1, msg: format!("unknown key {other:?}") }),
            }
        }
        let name = name.filter(|n| !n.is_empty()).ok_or_else(|| Error::Format("ensemble manifest has no name".into()))?;
        if checkpoints.is_empty() {
            return Err(Error::Format(format!("ensemble manifest {name} lists no checkpoints")));
        }
        Ok(Self { name, checkpoints })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new("")))
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("name = {}\n", self.name);
        for c in &self.checkpoints {
            s.push_str(&format!("checkpoint = {}\n", c.display()));
        }
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.to_text().as_bytes())
    }

    /// Load every checkpoint and check the members agree on shape.
    pub fn load_ensemble<T: Scalar>(&self) -> Result<EnsembleSpec<T>> {
        let members = self.checkpoints.iter().map(|p| load_checkpoint(p)).collect::<Result<Vec<_>>>()?;
        EnsembleSpec::new(self.name.clone(), members)
    }
}
