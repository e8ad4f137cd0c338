//! The versioned hyperparameter manifest (`hyperparams.toml`).

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ArchKind;
use crate::error::{Error, Result};

pub const DEFAULT_MANIFEST: &str = include_str!("../../hyperparams.toml");
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpHyper {
    pub hidden: Vec<usize>,
    pub dropout: Vec<f64>,
}

/// Convolution stack description shared by FCN and ResNet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvStackHyper {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderHyper {
    pub filters: Vec<usize>,
    pub kernels: Vec<usize>,
    pub dropout: f64,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McdcnnHyper {
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
    pub dense: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeCnnHyper {
    pub filters: Vec<usize>,
    pub kernel: usize,
    pub pool: usize,
}

/// Everything needed to rebuild one architecture's graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ArchSpec {
    Mlp(MlpHyper),
    Fcn(ConvStackHyper),
    Resnet(ConvStackHyper),
    Encoder(EncoderHyper),
    Mcdcnn(McdcnnHyper),
    Timecnn(TimeCnnHyper),
}

impl ArchSpec {
    pub fn kind(&self) -> ArchKind {
        match self {
            ArchSpec::Mlp(_) => ArchKind::Mlp,
            ArchSpec::Fcn(_) => ArchKind::Fcn,
            ArchSpec::Resnet(_) => ArchKind::ResNet,
            ArchSpec::Encoder(_) => ArchKind::Encoder,
            ArchSpec::Mcdcnn(_) => ArchKind::Mcdcnn,
            ArchSpec::Timecnn(_) => ArchKind::TimeCnn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochBudget {
    pub mlp: usize,
    pub fcn: usize,
    pub resnet: usize,
    pub encoder: usize,
    pub mcdcnn: usize,
    pub timecnn: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingDefaults {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub min_lr: f64,
    pub max_batch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeskProfile {
    pub epoch_cap: usize,
    pub finetune_epochs: usize,
    pub width_divisor: usize,
    pub min_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperManifest {
    pub version: u32,
    pub mlp: MlpHyper,
    pub fcn: ConvStackHyper,
    pub resnet: ConvStackHyper,
    pub encoder: EncoderHyper,
    pub mcdcnn: McdcnnHyper,
    pub timecnn: TimeCnnHyper,
    pub epochs: EpochBudget,
    pub training: TrainingDefaults,
    pub desk: DeskProfile,
}

impl Default for HyperManifest {
    fn default() -> Self {
        Self::parse(DEFAULT_MANIFEST).expect("compiled-in manifest is valid")
    }
}

impl HyperManifest {
    /// Parse a manifest; missing keys inherit the compiled-in defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut base: toml::Table = DEFAULT_MANIFEST.parse().map_err(|e| Error::Format(format!("{e}")))?;
        let user: toml::Table = text.parse().map_err(|e| Error::Format(format!("hyperparameter manifest: {e}")))?;
        merge(&mut base, user);
        let m: HyperManifest = toml::Value::Table(base)
            .try_into()
            .map_err(|e| Error::Format(format!("hyperparameter manifest: {e}")))?;
        if m.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {} (expected {MANIFEST_VERSION})", m.version)));
        }
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Format(format!("hyperparameter manifest: {m}")));
        if self.mlp.dropout.len() != self.mlp.hidden.len() + 1 {
            return bad("mlp.dropout needs one more entry than mlp.hidden");
        }
        for s in [&self.fcn, &self.resnet] {
            if s.filters.len() != s.kernels.len() || s.filters.is_empty() {
                return bad("filters and kernels must be non-empty and equally long");
            }
        }
        if self.resnet.kernels.len() != 3 {
            return bad("resnet.kernels lists the three kernel sizes of every block");
        }
        if self.encoder.filters.len() != self.encoder.kernels.len() || self.encoder.filters.last().is_none_or(|f| f % 2 != 0) {
            return bad("encoder filters/kernels must match and the last width must be even");
        }
        let rates = self.mlp.dropout.iter().chain([&self.encoder.dropout]);
        if rates.into_iter().any(|r| !(0.0..1.0).contains(r)) {
            return bad("dropout rates must lie in [0, 1)");
        }
        if self.desk.width_divisor == 0 || self.training.max_batch == 0 {
            return bad("width_divisor and max_batch must be positive");
        }
        Ok(())
    }

    pub fn spec(&self, kind: ArchKind) -> ArchSpec {
        match kind {
            ArchKind::Mlp => ArchSpec::Mlp(self.mlp.clone()),
            ArchKind::Fcn => ArchSpec::Fcn(self.fcn.clone()),
            ArchKind::ResNet => ArchSpec::Resnet(self.resnet.clone()),
            ArchKind::Encoder => ArchSpec::Encoder(self.encoder.clone()),
            ArchKind::Mcdcnn => ArchSpec::Mcdcnn(self.mcdcnn.clone()),
            ArchKind::TimeCnn => ArchSpec::Timecnn(self.timecnn.clone()),
        }
    }

    /// Architecture spec with widths shrunk by the desk profile.
    pub fn desk_spec(&self, kind: ArchKind) -> ArchSpec {
        let shrink = |w: usize| {
            let floor = w.min(self.desk.min_width);
            w.div_ceil(self.desk.width_divisor).max(floor)
        };
        let shrink_all = |ws: &[usize]| ws.iter().map(|&w| shrink(w)).collect::<Vec<_>>();
        match self.spec(kind) {
            ArchSpec::Mlp(h) => ArchSpec::Mlp(MlpHyper { hidden: shrink_all(&h.hidden), ..h }),
            ArchSpec::Fcn(h) => ArchSpec::Fcn(ConvStackHyper { filters: shrink_all(&h.filters), ..h }),
            ArchSpec::Resnet(h) => ArchSpec::Resnet(ConvStackHyper { filters: shrink_all(&h.filters), ..h }),
            ArchSpec::Encoder(h) => {
                let mut filters = shrink_all(&h.filters);
                if let Some(last) = filters.last_mut() {
                    *last += *last % 2;
                }
                ArchSpec::Encoder(EncoderHyper { filters, ..h })
            }
            ArchSpec::Mcdcnn(h) => ArchSpec::Mcdcnn(McdcnnHyper { filters: shrink_all(&h.filters), dense: shrink(h.dense), ..h }),
            ArchSpec::Timecnn(h) => ArchSpec::Timecnn(TimeCnnHyper { filters: shrink_all(&h.filters), ..h }),
        }
    }

    pub fn epochs(&self, kind: ArchKind) -> usize {
        let e = &self.epochs;
        match kind {
            ArchKind::Mlp => e.mlp,
            ArchKind::Fcn => e.fcn,
            ArchKind::ResNet => e.resnet,
            ArchKind::Encoder => e.encoder,
            ArchKind::Mcdcnn => e.mcdcnn,
            ArchKind::TimeCnn => e.timecnn,
        }
    }

    pub fn desk_epochs(&self, kind: ArchKind) -> usize {
        self.epochs(kind).min(self.desk.epoch_cap)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }
}

fn merge(base: &mut toml::Table, user: toml::Table) {
    for (k, v) in user {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(u)) => merge(b, u),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
