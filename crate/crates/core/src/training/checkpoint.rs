//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "TSCE"            4 bytes
//! version           u32
//! metadata length   u64
//! metadata          UTF-8 JSON (architecture, seeds, config, history, shapes)
//! value count       u64
//! payload           f64 values, per node: parameters then buffers
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EpochRecord, Provenance, TrainConfig, TrainedModel};
use crate::arch::{build_model_with, ArchKind, ArchSpec};
use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::scalar::Scalar;
use crate::util::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"TSCE";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Metadata {
    kind: ArchKind,
    spec: ArchSpec,
    input_length: usize,
    n_classes: usize,
    arch_seed: u64,
    config: TrainConfig,
    config_digest: String,
    history: Vec<EpochRecord>,
    selected_epoch: Option<usize>,
    dataset: String,
    provenance: Option<Provenance>,
    shapes: Vec<Vec<usize>>,
}

pub fn encode_checkpoint<T: Scalar>(model: &TrainedModel<T>) -> Vec<u8> {
    let g = &model.graph;
    let state = g.state_tensors();
    let meta = Metadata {
        kind: g.kind(),
        spec: g.spec().clone(),
        input_length: g.input_length(),
        n_classes: g.n_classes(),
        arch_seed: g.seed(),
        config: model.config.clone(),
        config_digest: model.config_digest.clone(),
        history: model.history.clone(),
        selected_epoch: model.selected_epoch,
        dataset: model.dataset.clone(),
        provenance: model.provenance.clone(),
        shapes: state.iter().map(|t| t.shape().to_vec()).collect(),
    };
    let json = serde_json::to_vec(&meta).expect("metadata serializes");
    let count: usize = state.iter().map(|t| t.len()).sum();
    let mut out = Vec::with_capacity(24 + json.len() + 8 * count);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(count as u64).to_le_bytes());
    for t in state {
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format(format!("checkpoint truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<TrainedModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!("checkpoint version {version}, expected {CHECKPOINT_VERSION}")));
    }
    let meta_len = usize::try_from(r.u64()?).map_err(|_| Error::Format("metadata length overflows".into()))?;
    let meta: Metadata =
        serde_json::from_slice(r.take(meta_len)?).map_err(|e| Error::Format(format!("checkpoint metadata: {e}")))?;
    if meta.spec.kind() != meta.kind {
        return Err(Error::Format("checkpoint kind disagrees with its architecture spec".into()));
    }
    if meta.config.digest() != meta.config_digest {
        return Err(Error::Format("checkpoint config digest does not match its config".into()));
    }
    let mut graph = build_model_with::<T>(&meta.spec, meta.input_length, meta.n_classes, meta.arch_seed)
        .map_err(|e| Error::Format(format!("checkpoint architecture: {e}")))?;
    let count = r.u64()?;
    {
        let slots = graph.state_tensors_mut();
        let shapes_ok = slots.len() == meta.shapes.len() && slots.iter().zip(&meta.shapes).all(|(t, s)| t.shape() == s.as_slice());
        let expected: usize = meta.shapes.iter().map(|s| s.iter().product::<usize>()).sum();
        if !shapes_ok || expected as u64 != count {
            return Err(Error::Format("checkpoint tensor shapes do not match the architecture".into()));
        }
        for (slot, shape) in slots.into_iter().zip(&meta.shapes) {
            let n: usize = shape.iter().product();
            let raw = r.take(8 * n)?;
            let data = raw.chunks_exact(8).map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes")))).collect();
            *slot = Tensor::from_vec(shape, data)?;
        }
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!("{} trailing bytes after checkpoint payload", bytes.len() - r.pos)));
    }
    Ok(TrainedModel {
        graph,
        config: meta.config,
        config_digest: meta.config_digest,
        history: meta.history,
        selected_epoch: meta.selected_epoch,
        dataset: meta.dataset,
        provenance: meta.provenance,
    })
}

pub fn save_checkpoint<T: Scalar>(model: &TrainedModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_checkpoint(model))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<TrainedModel<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
