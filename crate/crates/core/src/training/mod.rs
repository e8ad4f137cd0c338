//! Seeded mini-batch training, evaluation and checkpoints.

mod checkpoint;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};

use crate::arch::{batch_tensor, ArchKind, HyperManifest, ModelGraph};
use crate::data::{Accuracy, TimeSeries, TimeSeriesDataset};
use crate::error::{Error, Result};
use crate::nn::{adam_step, loss, AdamHyper, AdamState, Mode, Tensor};
use crate::rng::{run_rng, RunRng};
use crate::scalar::Scalar;
use crate::util::{argmax, sha256_hex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointPolicy {
    BestTrainLoss,
    Final,
}

/// Reduce-on-plateau learning-rate schedule driven by the epoch training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub factor: f64,
    pub patience: usize,
    pub min_lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamHyper,
    pub plateau: PlateauSchedule,
    pub seed: u64,
    pub checkpoint: CheckpointPolicy,
}

/// `min(max_batch, ceil(n_train / 10))`, at least 1.
pub fn default_batch_size(n_train: usize, max_batch: usize) -> usize {
    n_train.div_ceil(10).clamp(1, max_batch.max(1))
}

impl TrainConfig {
    /// Defaults from the hyperparameter manifest for one architecture.
    pub fn from_manifest(manifest: &HyperManifest, kind: ArchKind, n_train: usize, seed: u64, desk: bool) -> Self {
        let t = &manifest.training;
        Self {
            epochs: if desk { manifest.desk_epochs(kind) } else { manifest.epochs(kind) },
            batch_size: default_batch_size(n_train, t.max_batch),
            adam: AdamHyper { lr: t.lr, beta1: t.beta1, beta2: t.beta2, epsilon: t.epsilon },
            plateau: PlateauSchedule { factor: t.plateau_factor, patience: t.plateau_patience, min_lr: t.min_lr },
            seed,
            checkpoint: CheckpointPolicy::BestTrainLoss,
        }
    }

    /// Fine-tuning budget: half the from-scratch epochs, or the desk value.
    pub fn finetune_from_manifest(manifest: &HyperManifest, kind: ArchKind, n_train: usize, seed: u64, desk: bool) -> Self {
        let mut config = Self::from_manifest(manifest, kind, n_train, seed, desk);
        config.epochs = if desk { manifest.desk.finetune_epochs } else { (manifest.epochs(kind) / 2).max(1) };
        config
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Domain("epochs must be at least 1".into()));
        }
        self.validate_rest()
    }

    fn validate_rest(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Domain("batch size must be at least 1".into()));
        }
        let p = &self.plateau;
        if !(p.factor > 0.0 && p.factor < 1.0) {
            return Err(Error::Domain(format!("plateau factor {} outside (0, 1)", p.factor)));
        }
        let a = &self.adam;
        if !(a.lr > 0.0 && p.min_lr >= 0.0 && a.epsilon > 0.0 && (0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2)) {
            return Err(Error::Domain("optimizer hyperparameters out of range".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

/// Where a fine-tuned model came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_dataset: String,
    pub target_dataset: String,
    pub source_arch_seed: u64,
    pub head_seed: u64,
}

/// A graph with learned weights and the facts needed to reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel<T> {
    pub graph: ModelGraph<T>,
    pub config: TrainConfig,
    pub config_digest: String,
    pub history: Vec<EpochRecord>,
    /// Zero-based epoch whose weights were kept, if any training happened.
    pub selected_epoch: Option<usize>,
    pub dataset: String,
    pub provenance: Option<Provenance>,
}

impl<T: Scalar> TrainedModel<T> {
    pub fn kind(&self) -> ArchKind {
        self.graph.kind()
    }

    pub fn arch_seed(&self) -> u64 {
        self.graph.seed()
    }

    pub fn train_seed(&self) -> u64 {
        self.config.seed
    }

    pub fn n_classes(&self) -> usize {
        self.graph.n_classes()
    }

    pub fn input_length(&self) -> usize {
        self.graph.input_length()
    }

    /// Eval-mode outputs, one row per series, as `f64`.
    pub fn predict(&self, series: &[TimeSeries]) -> Result<Vec<Vec<f64>>> {
        let mut rows = Vec::with_capacity(series.len());
        for chunk in series.chunks(EVAL_CHUNK) {
            let refs: Vec<&TimeSeries> = chunk.iter().collect();
            let out = self.graph.predict_series(&refs)?;
            rows.extend((0..chunk.len()).map(|i| out.row(i).iter().map(|v| v.as_f64()).collect()));
        }
        Ok(rows)
    }
}

const EVAL_CHUNK: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub accuracy: Accuracy,
    pub mean_loss: f64,
    pub correct: usize,
    pub total: usize,
}

/// Accuracy (argmax, lowest index wins ties) and mean loss on a split.
pub fn evaluate<T: Scalar>(model: &TrainedModel<T>, split: &[TimeSeries]) -> Result<Evaluation> {
    if split.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty split".into()));
    }
    let kind = model.graph.loss_kind();
    let mut correct = 0;
    let mut total_loss = 0.0;
    for chunk in split.chunks(EVAL_CHUNK) {
        let refs: Vec<&TimeSeries> = chunk.iter().collect();
        let out = model.graph.predict_series(&refs)?;
        let labels: Vec<usize> = chunk.iter().map(|s| s.label).collect();
        let (l, _) = loss(kind, &out, &labels)?;
        total_loss += l.as_f64() * chunk.len() as f64;
        correct += labels.iter().enumerate().filter(|(i, &y)| argmax(out.row(*i)) == y).count();
    }
    Ok(Evaluation {
        accuracy: Accuracy::from_counts(correct, split.len()),
        mean_loss: total_loss / split.len() as f64,
        correct,
        total: split.len(),
    })
}

/// One forward/backward/Adam update on a batch. Returns the batch loss
/// before the update and how many rows were classified correctly.
pub fn train_step<T: Scalar, R: Rng>(
    graph: &mut ModelGraph<T>,
    adam: &mut AdamState<T>,
    batch: &Tensor<T>,
    labels: &[usize],
    rng: &mut R,
) -> Result<(T, usize)> {
    let (out, cache) = graph.forward(batch, Mode::Train, rng)?;
    let (value, grad) = loss(graph.loss_kind(), &out, labels)?;
    if !value.is_finite() {
        return Err(Error::numerics("non-finite loss"));
    }
    let correct = labels.iter().enumerate().filter(|(i, &y)| argmax(out.row(*i)) == y).count();
    let (_, grads) = graph.backward(&cache, &grad)?;
    adam_step(&mut graph.params_mut(), &grads, adam)?;
    graph.commit(&cache)?;
    Ok((value, correct))
}

pub fn train<T: Scalar>(model: ModelGraph<T>, dataset: &TimeSeriesDataset, config: &TrainConfig) -> Result<TrainedModel<T>> {
    config.validate()?;
    fit(model, &dataset.train, &dataset.name, config)
}

/// Train on an explicit list of series.
pub fn train_on<T: Scalar>(model: ModelGraph<T>, series: &[TimeSeries], name: &str, config: &TrainConfig) -> Result<TrainedModel<T>> {
    config.validate()?;
    fit(model, series, name, config)
}

/// Like [`train_on`] but `epochs == 0` returns the model untouched.
pub(crate) fn fit<T: Scalar>(
    mut graph: ModelGraph<T>,
    series: &[TimeSeries],
    name: &str,
    config: &TrainConfig,
) -> Result<TrainedModel<T>> {
    config.validate_rest()?;
    if series.is_empty() {
        return Err(Error::Domain("training split is empty".into()));
    }
    if let Some(bad) = series.iter().find(|s| s.len() != graph.input_length()) {
        return Err(Error::Shape(format!("series of length {} for a model of length {}", bad.len(), graph.input_length())));
    }
    if let Some(bad) = series.iter().find(|s| s.label >= graph.n_classes()) {
        return Err(Error::Label(format!("label {} for a {}-class model", bad.label, graph.n_classes())));
    }

    // Every draw (shuffle, then dropout masks batch by batch) comes from this generator.
    let mut rng: RunRng = run_rng(config.seed);
    let mut adam = AdamState::new(graph.params(), config.adam);
    let mut order: Vec<usize> = (0..series.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, usize, Vec<Tensor<T>>)> = None;
    let mut plateau_best = f64::INFINITY;
    let mut wait = 0;

    for epoch in 0..config.epochs {
        let at_epoch = |e: Error| match e {
            Error::Numerics { msg, .. } => Error::Numerics { epoch: Some(epoch), msg },
            other => other,
        };
        order.shuffle(&mut rng);
        let lr = adam.hyper.lr;
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for idx in order.chunks(config.batch_size) {
            let refs: Vec<&TimeSeries> = idx.iter().map(|&i| &series[i]).collect();
            let labels: Vec<usize> = refs.iter().map(|s| s.label).collect();
            let batch = batch_tensor(&refs)?;
            let (l, c) = train_step(&mut graph, &mut adam, &batch, &labels, &mut rng).map_err(at_epoch)?;
            loss_sum += l.as_f64() * idx.len() as f64;
            correct += c;
        }
        let epoch_loss = loss_sum / series.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Numerics { epoch: Some(epoch), msg: "non-finite epoch loss".into() });
        }
        history.push(EpochRecord { loss: epoch_loss, accuracy: correct as f64 / series.len() as f64, lr });

        if config.checkpoint == CheckpointPolicy::BestTrainLoss && best.as_ref().is_none_or(|b| epoch_loss < b.0) {
            best = Some((epoch_loss, epoch, graph.state_tensors().into_iter().cloned().collect()));
        }
        if epoch_loss < plateau_best {
            plateau_best = epoch_loss;
            wait = 0;
        } else {
            wait += 1;
            if wait >= config.plateau.patience {
                adam.hyper.lr = (adam.hyper.lr * config.plateau.factor).max(config.plateau.min_lr);
                wait = 0;
            }
        }
    }

    let selected_epoch = match best {
        Some((_, epoch, state)) => {
            for (dst, src) in graph.state_tensors_mut().into_iter().zip(state) {
                *dst = src;
            }
            Some(epoch)
        }
        None => config.epochs.checked_sub(1),
    };
    Ok(TrainedModel {
        graph,
        config: config.clone(),
        config_digest: config.digest(),
        history,
        selected_epoch,
        dataset: name.to_string(),
        provenance: None,
    })
}
