use rand::Rng;

use super::hyper::ArchSpec;
use super::{ArchKind, OutputKind};
use crate::data::TimeSeries;
use crate::error::{Error, Result};
use crate::nn::{Cache, ForwardCtx, Layer, LayerKind, LossKind, Mode, Tensor};
use crate::rng::run_rng;
use crate::scalar::Scalar;

/// Index of the graph input in [`Node::inputs`]; node `i` is referenced as `i + 1`.
pub const GRAPH_INPUT: usize = 0;

#[derive(Debug, Clone, PartialEq)]
pub struct Node<T> {
    pub layer: Layer<T>,
    pub inputs: Vec<usize>,
}

/// A fixed, topologically ordered layer graph. The last node is the output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph<T> {
    pub(crate) kind: ArchKind,
    pub(crate) spec: ArchSpec,
    pub(crate) nodes: Vec<Node<T>>,
    pub(crate) input_length: usize,
    pub(crate) n_classes: usize,
    pub(crate) seed: u64,
}

pub struct GraphCache<T> {
    caches: Vec<Cache<T>>,
    input_shape: Vec<usize>,
}

/// Stack series into a `batch x 1 x length` tensor.
pub fn batch_tensor<T: Scalar>(series: &[&TimeSeries]) -> Result<Tensor<T>> {
    let len = series.first().map_or(0, |s| s.len());
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::Shape("series in one batch differ in length".into()));
    }
    let data = series.iter().flat_map(|s| s.values.iter().map(|&v| T::of(v))).collect();
    Tensor::from_vec(&[series.len(), 1, len], data)
}

impl<T: Scalar> ModelGraph<T> {
    pub fn kind(&self) -> ArchKind {
        self.kind
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn input_length(&self) -> usize {
        self.input_length
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    /// Seed the weights were initialized from.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn nodes(&self) -> &[Node<T>] {
        &self.nodes
    }

    pub fn output_kind(&self) -> OutputKind {
        self.kind.output_kind()
    }

    pub fn loss_kind(&self) -> LossKind {
        match self.output_kind() {
            OutputKind::SoftmaxDistribution => LossKind::CrossEntropy,
            OutputKind::PerClassSigmoid => LossKind::Mse,
        }
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.nodes.iter().map(|n| n.layer.kind()).collect()
    }

    /// Index of the final dense layer (the classification head).
    pub fn head_index(&self) -> Option<usize> {
        self.nodes.iter().rposition(|n| n.layer.kind() == LayerKind::Dense)
    }

    pub fn count_parameters(&self) -> usize {
        self.nodes.iter().map(|n| n.layer.param_count()).sum()
    }

    /// Trainable parameters in node order.
    pub fn params(&self) -> Vec<&Tensor<T>> {
        self.nodes.iter().flat_map(|n| n.layer.params()).collect()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.nodes.iter_mut().flat_map(|n| n.layer.params_mut()).collect()
    }

    /// Parameters followed by non-trainable buffers, per node in order: the
    /// checkpoint payload layout.
    pub fn state_tensors(&self) -> Vec<&Tensor<T>> {
        self.nodes.iter().flat_map(|n| n.layer.params().into_iter().chain(n.layer.buffers())).collect()
    }

    pub fn state_tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        self.nodes.iter_mut().flat_map(|n| n.layer.state_mut()).collect()
    }

    pub fn forward<R: Rng>(&self, batch: &Tensor<T>, mode: Mode, rng: &mut R) -> Result<(Tensor<T>, GraphCache<T>)> {
        let (_, c, len) = batch.dims3()?;
        if c != 1 || len != self.input_length {
            return Err(Error::Shape(format!(
                "model expects batch x 1 x {}, got {:?}",
                self.input_length,
                batch.shape()
            )));
        }
        let mut ctx = ForwardCtx { mode, rng };
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.nodes.len());
        let mut caches = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let inputs: Vec<&Tensor<T>> = node
                .inputs
                .iter()
                .map(|&i| if i == GRAPH_INPUT { batch } else { &outputs[i - 1] })
                .collect();
            let (y, cache) = node.layer.forward(&inputs, &mut ctx)?;
            outputs.push(y);
            caches.push(cache);
        }
        let out = outputs.pop().ok_or_else(|| Error::State("empty graph".into()))?;
        Ok((out, GraphCache { caches, input_shape: batch.shape().to_vec() }))
    }

    /// Inference in eval mode.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        // eval mode draws nothing from the generator
        let mut rng = run_rng(0);
        Ok(self.forward(batch, Mode::Eval, &mut rng)?.0)
    }

    pub fn predict_series(&self, series: &[&TimeSeries]) -> Result<Tensor<T>> {
        self.predict(&batch_tensor(series)?)
    }

    /// Apply training-mode state updates (batch-norm running statistics).
    pub fn commit(&mut self, cache: &GraphCache<T>) -> Result<()> {
        if cache.caches.len() != self.nodes.len() {
            return Err(Error::State("graph cache from a different model".into()));
        }
        for (node, c) in self.nodes.iter_mut().zip(&cache.caches) {
            node.layer.commit(c)?;
        }
        Ok(())
    }

    /// Gradient of the input and of every parameter (in [`Self::params`] order).
    pub fn backward(&self, cache: &GraphCache<T>, grad_output: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        if cache.caches.len() != self.nodes.len() {
            return Err(Error::State("graph cache from a different model".into()));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; n + 1];
        grads[n] = Some(grad_output.clone());
        let mut param_grads: Vec<Vec<Tensor<T>>> = vec![Vec::new(); n];
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            let Some(g) = grads[i + 1].take() else {
                param_grads[i] = node.layer.params().iter().map(|p| Tensor::zeros(p.shape())).collect();
                continue;
            };
            let (gx, gp) = node.layer.backward(&cache.caches[i], &g)?;
            for (&src, gi) in node.inputs.iter().zip(gx) {
                match &mut grads[src] {
                    Some(acc) => acc.add_assign(&gi),
                    slot @ None => *slot = Some(gi),
                }
            }
            param_grads[i] = gp;
        }
        let gin = grads[GRAPH_INPUT].take().unwrap_or_else(|| Tensor::zeros(&cache.input_shape));
        Ok((gin, param_grads.into_iter().flatten().collect()))
    }

    /// Copy of the graph with every residual merge reduced to its main branch.
    pub fn without_shortcuts(&self) -> Self {
        let mut g = self.clone();
        for node in &mut g.nodes {
            if node.layer.kind() == LayerKind::Add {
                node.inputs.truncate(1);
            }
        }
        g
    }

    pub fn has_layer(&self, kind: LayerKind) -> bool {
        self.nodes.iter().any(|n| n.layer.kind() == kind)
    }

    /// Check the structural facts every architecture must satisfy.
    pub fn audit(&self) -> Result<()> {
        let kinds = self.layer_kinds();
        let fail = |m: &str| Err(Error::Spec(format!("{} audit: {m}", self.kind)));
        let last = *kinds.last().expect("non-empty graph");
        match self.output_kind() {
            OutputKind::SoftmaxDistribution if last != LayerKind::Softmax => return fail("must end in softmax"),
            OutputKind::PerClassSigmoid if last != LayerKind::Sigmoid => return fail("must end in sigmoid"),
            _ => {}
        }
        let head = self.head_index().map(|i| &self.nodes[i].layer);
        match head {
            Some(Layer::Dense(d)) if d.outputs() == self.n_classes => {}
            _ => return fail("head width must equal the class count"),
        }
        let count = |k| kinds.iter().filter(|&&x| x == k).count();
        match self.kind {
            ArchKind::Mlp => {
                if count(LayerKind::Dense) != 4 || count(LayerKind::Dropout) == 0 {
                    return fail("needs 3 hidden dense layers plus the head, with dropout");
                }
            }
            ArchKind::Fcn => {
                let tail = &kinds[kinds.len() - 3..];
                if tail != [LayerKind::GlobalAvgPool, LayerKind::Dense, LayerKind::Softmax] || count(LayerKind::Conv1d) != 3 {
                    return fail("needs three conv blocks then gap -> dense -> softmax");
                }
            }
            ArchKind::ResNet => {
                if !self.nodes.iter().any(|n| n.layer.kind() == LayerKind::Add && n.inputs.len() > 1) {
                    return fail("needs live shortcut merges");
                }
            }
            ArchKind::Encoder => {
                if count(LayerKind::Dropout) == 0 || count(LayerKind::AttentionFuse) != 1 {
                    return fail("needs dropout and an attention fuse");
                }
            }
            ArchKind::Mcdcnn => {
                for (i, k) in kinds.iter().enumerate() {
                    if *k == LayerKind::Conv1d && !kinds[i + 1..].iter().take(2).any(|k| *k == LayerKind::MaxPool) {
                        return fail("every convolution must be followed by max pooling");
                    }
                }
            }
            ArchKind::TimeCnn => {
                if self.loss_kind() != LossKind::Mse {
                    return fail("must train with mean squared error");
                }
            }
        }
        Ok(())
    }
}
