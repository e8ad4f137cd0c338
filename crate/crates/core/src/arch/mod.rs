//! The six probabilistic architectures, built as explicit layer graphs.

pub mod check;
mod graph;
pub mod hyper;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use graph::{batch_tensor, GraphCache, ModelGraph, Node, GRAPH_INPUT};
pub use hyper::{ArchSpec, HyperManifest};

use crate::error::{Error, Result};
use crate::nn::{BatchNorm, Conv1d, Dense, Layer, Padding};
use crate::rng::{run_rng, RunRng};
use crate::scalar::Scalar;

/// Shortest series any architecture accepts.
pub const MIN_INPUT_LENGTH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchKind {
    Mlp,
    Fcn,
    #[serde(rename = "resnet")]
    ResNet,
    Encoder,
    Mcdcnn,
    #[serde(rename = "timecnn")]
    TimeCnn,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputKind {
    SoftmaxDistribution,
    PerClassSigmoid,
}

impl ArchKind {
    pub const ALL: [ArchKind; 6] =
        [ArchKind::Mlp, ArchKind::Fcn, ArchKind::ResNet, ArchKind::Encoder, ArchKind::Mcdcnn, ArchKind::TimeCnn];

    /// The members of the neural network ensemble (NNE).
    pub const NNE: [ArchKind; 3] = [ArchKind::ResNet, ArchKind::Fcn, ArchKind::Encoder];

    pub fn output_kind(self) -> OutputKind {
        match self {
            ArchKind::TimeCnn => OutputKind::PerClassSigmoid,
            _ => OutputKind::SoftmaxDistribution,
        }
    }

    /// Global pooling over time makes the parameter shapes independent of the
    /// series length.
    pub fn is_length_invariant(self) -> bool {
        matches!(self, ArchKind::Fcn | ArchKind::ResNet | ArchKind::Encoder)
    }

    pub fn slug(self) -> &'static str {
        match self {
            ArchKind::Mlp => "mlp",
            ArchKind::Fcn => "fcn",
            ArchKind::ResNet => "resnet",
            ArchKind::Encoder => "encoder",
            ArchKind::Mcdcnn => "mcdcnn",
            ArchKind::TimeCnn => "timecnn",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Mlp => "MLP",
            ArchKind::Fcn => "FCN",
            ArchKind::ResNet => "ResNet",
            ArchKind::Encoder => "Encoder",
            ArchKind::Mcdcnn => "MCDCNN",
            ArchKind::TimeCnn => "Time-CNN",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s.chars().filter(|c| c.is_ascii_alphanumeric()).collect::<String>().to_ascii_lowercase();
        ArchKind::ALL
            .into_iter()
            .find(|k| k.slug() == norm)
            .ok_or_else(|| Error::Domain(format!("unknown architecture {s:?}")))
    }
}

/// Appends nodes in order, initializing weights from one generator.
struct GraphBuilder<T> {
    nodes: Vec<Node<T>>,
    rng: RunRng,
    channels: usize,
    length: usize,
}

impl<T: Scalar> GraphBuilder<T> {
    fn new(seed: u64, length: usize) -> Self {
        Self { nodes: Vec::new(), rng: run_rng(seed), channels: 1, length }
    }

    /// Reference to the most recent node (or the graph input).
    fn last(&self) -> usize {
        self.nodes.len()
    }

    fn push_from(&mut self, layer: Layer<T>, inputs: Vec<usize>) -> usize {
        self.nodes.push(Node { layer, inputs });
        self.nodes.len()
    }

    fn push(&mut self, layer: Layer<T>) -> usize {
        let prev = self.last();
        self.push_from(layer, vec![prev])
    }

    fn conv_from(&mut self, src: usize, in_ch: usize, out_ch: usize, kernel: usize) -> Result<usize> {
        let conv = Conv1d::new(in_ch, out_ch, kernel, Padding::Same, &mut self.rng)?;
        Ok(self.push_from(Layer::Conv1d(conv), vec![src]))
    }

    fn conv(&mut self, out_ch: usize, kernel: usize) -> Result<usize> {
        let id = self.conv_from(self.last(), self.channels, out_ch, kernel)?;
        self.channels = out_ch;
        Ok(id)
    }

    fn batch_norm(&mut self) -> usize {
        self.push(Layer::BatchNorm(BatchNorm::new(self.channels)))
    }

    fn pool(&mut self, layer: Layer<T>, width: usize) -> Result<usize> {
        if self.length / width == 0 {
            return Err(Error::Domain(format!("series too short for the pooling chain (length {} at pool {width})", self.length)));
        }
        self.length /= width;
        Ok(self.push(layer))
    }

    fn dense(&mut self, inputs: usize, outputs: usize) -> Result<usize> {
        let d = Dense::new(inputs, outputs, &mut self.rng)?;
        Ok(self.push(Layer::Dense(d)))
    }
}

/// Build an architecture with the compiled-in full-scale hyperparameters.
pub fn build_model<T: Scalar>(kind: ArchKind, input_length: usize, n_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    build_model_with(&HyperManifest::default().spec(kind), input_length, n_classes, seed)
}

pub fn build_model_with<T: Scalar>(spec: &ArchSpec, input_length: usize, n_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    if input_length < MIN_INPUT_LENGTH {
        return Err(Error::Domain(format!("input length {input_length} is below {MIN_INPUT_LENGTH}")));
    }
    if n_classes < 2 {
        return Err(Error::Domain(format!("need at least 2 classes, got {n_classes}")));
    }
    let mut b = GraphBuilder::<T>::new(seed, input_length);
    match spec {
        ArchSpec::Mlp(h) => {
            b.push(Layer::Flatten);
            let mut width = input_length;
            for (i, &hidden) in h.hidden.iter().enumerate() {
                b.push(Layer::dropout(h.dropout[i])?);
                b.dense(width, hidden)?;
                b.push(Layer::Relu);
                width = hidden;
            }
            b.push(Layer::dropout(h.dropout[h.hidden.len()])?);
            b.dense(width, n_classes)?;
            b.push(Layer::Softmax);
        }
        ArchSpec::Fcn(h) => {
            for (&f, &k) in h.filters.iter().zip(&h.kernels) {
                b.conv(f, k)?;
                b.batch_norm();
                b.push(Layer::Relu);
            }
            b.push(Layer::GlobalAvgPool);
            b.dense(b.channels, n_classes)?;
            b.push(Layer::Softmax);
        }
        ArchSpec::Resnet(h) => {
            for &f in &h.filters {
                let block_in = b.last();
                let in_ch = b.channels;
                for (j, &k) in h.kernels.iter().enumerate() {
                    b.conv(f, k)?;
                    b.batch_norm();
                    if j + 1 < h.kernels.len() {
                        b.push(Layer::Relu);
                    }
                }
                let main = b.last();
                let shortcut = if in_ch != f {
                    let proj = b.conv_from(block_in, in_ch, f, 1)?;
                    b.push_from(Layer::BatchNorm(BatchNorm::new(f)), vec![proj])
                } else {
                    block_in
                };
                b.push_from(Layer::Add, vec![main, shortcut]);
                b.push(Layer::Relu);
            }
            b.push(Layer::GlobalAvgPool);
            b.dense(b.channels, n_classes)?;
            b.push(Layer::Softmax);
        }
        ArchSpec::Encoder(h) => {
            for (&f, &k) in h.filters.iter().zip(&h.kernels) {
                b.conv(f, k)?;
                b.batch_norm();
                b.push(Layer::prelu(f));
                b.push(Layer::dropout(h.dropout)?);
                b.pool(Layer::MaxPool { width: h.pool }, h.pool)?;
            }
            b.push(Layer::AttentionFuse);
            b.dense(b.channels / 2, n_classes)?;
            b.push(Layer::Softmax);
        }
        ArchSpec::Mcdcnn(h) => {
            for &f in &h.filters {
                b.conv(f, h.kernel)?;
                b.push(Layer::Relu);
                b.pool(Layer::MaxPool { width: h.pool }, h.pool)?;
            }
            b.push(Layer::Flatten);
            b.dense(b.channels * b.length, h.dense)?;
            b.push(Layer::Relu);
            b.dense(h.dense, n_classes)?;
            b.push(Layer::Softmax);
        }
        ArchSpec::Timecnn(h) => {
            for &f in &h.filters {
                b.conv(f, h.kernel)?;
                b.push(Layer::Sigmoid);
                b.pool(Layer::AvgPool { width: h.pool }, h.pool)?;
            }
            b.push(Layer::Flatten);
            b.dense(b.channels * b.length, n_classes)?;
            b.push(Layer::Sigmoid);
        }
    }
    let graph = ModelGraph { kind: spec.kind(), spec: spec.clone(), nodes: b.nodes, input_length, n_classes, seed };
    graph.audit()?;
    Ok(graph)
}
