//! Probability-averaging ensembles: each class score is the plain mean of
//! the members' outputs for that class.

mod manifest;

use std::collections::BTreeSet;
use std::path::PathBuf;

use rayon::prelude::*;

pub use manifest::EnsembleManifest;

use crate::arch::{build_model_with, ArchKind, ArchSpec, HyperManifest};
use crate::data::{Accuracy, TimeSeries, TimeSeriesDataset};
use crate::error::{Error, MemberFailure, Result};
use crate::scalar::Scalar;
use crate::training::{save_checkpoint, train_on, CheckpointPolicy, TrainConfig, TrainedModel};
use crate::util::{argmax, run_jobs};

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSpec<T> {
    pub name: String,
    members: Vec<TrainedModel<T>>,
    /// Rescale each member row to sum to one before averaging. Off by
    /// default, so sigmoid outputs are averaged as they are.
    pub normalize: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsemblePrediction {
    pub probabilities: Vec<f64>,
    pub predicted_class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleEvaluation {
    pub accuracy: Accuracy,
    pub correct: usize,
    pub total: usize,
    pub predictions: Vec<EnsemblePrediction>,
}

/// `(1/n) * sum_j rows[j]`. Each class column is summed in ascending order,
/// so the result does not depend on member order, bit for bit.
pub fn average_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let width = rows.first().map_or(0, Vec::len);
    (0..width)
        .map(|c| {
            let mut column: Vec<f64> = rows.iter().map(|r| r[c]).collect();
            column.sort_by(f64::total_cmp);
            column.iter().sum::<f64>() / n
        })
        .collect()
}

fn normalized(row: &[f64]) -> Vec<f64> {
    let total: f64 = row.iter().sum();
    row.iter().map(|v| v / total).collect()
}

/// Mean of `-ln p(true class)` over rows.
pub fn mean_cross_entropy(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    rows.iter().zip(labels).map(|(r, &y)| -r[y].ln()).sum::<f64>() / rows.len() as f64
}

impl<T: Scalar> EnsembleSpec<T> {
    pub fn new(name: impl Into<String>, members: Vec<TrainedModel<T>>) -> Result<Self> {
        let name = name.into();
        let first = members.first().ok_or_else(|| Error::Spec(format!("ensemble {name} has no members")))?;
        let shape = (first.input_length(), first.n_classes());
        if members.iter().any(|m| (m.input_length(), m.n_classes()) != shape) {
            let list: Vec<String> = members
                .iter()
                .map(|m| format!("{} seed {} (length {}, {} classes)", m.kind(), m.arch_seed(), m.input_length(), m.n_classes()))
                .collect();
            return Err(Error::Spec(format!("incompatible ensemble members: {}", list.join(", "))));
        }
        Ok(Self { name, members, normalize: false })
    }

    pub fn members(&self) -> &[TrainedModel<T>] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn n_classes(&self) -> usize {
        self.members[0].n_classes()
    }

    pub fn input_length(&self) -> usize {
        self.members[0].input_length()
    }

    /// Every member's output rows, in member order.
    pub fn member_outputs(&self, series: &[TimeSeries]) -> Result<Vec<Vec<Vec<f64>>>> {
        if let Some(bad) = series.iter().find(|s| s.len() != self.input_length()) {
            return Err(Error::Shape(format!("series of length {} for an ensemble of length {}", bad.len(), self.input_length())));
        }
        self.members.par_iter().map(|m| m.predict(series)).collect()
    }

    pub fn predict_batch(&self, series: &[TimeSeries]) -> Result<Vec<EnsemblePrediction>> {
        let outputs = self.member_outputs(series)?;
        Ok((0..series.len())
            .map(|i| {
                let rows: Vec<Vec<f64>> = outputs
                    .iter()
                    .map(|member| if self.normalize { normalized(&member[i]) } else { member[i].clone() })
                    .collect();
                let probabilities = average_rows(&rows);
                EnsemblePrediction { predicted_class: argmax(&probabilities), probabilities }
            })
            .collect())
    }
}

pub fn ensemble_predict<T: Scalar>(spec: &EnsembleSpec<T>, x: &TimeSeries) -> Result<EnsemblePrediction> {
    Ok(spec.predict_batch(std::slice::from_ref(x))?.remove(0))
}

pub fn evaluate_ensemble<T: Scalar>(spec: &EnsembleSpec<T>, split: &[TimeSeries]) -> Result<EnsembleEvaluation> {
    if split.is_empty() {
        return Err(Error::Domain("cannot evaluate on an empty split".into()));
    }
    let predictions = spec.predict_batch(split)?;
    let correct = predictions.iter().zip(split).filter(|(p, s)| p.predicted_class == s.label).count();
    Ok(EnsembleEvaluation { accuracy: Accuracy::from_counts(correct, split.len()), correct, total: split.len(), predictions })
}

/// How ensemble members are configured and trained. A member with seed `s`
/// uses `s` both for its initial weights and for its training run.
#[derive(Debug, Clone)]
pub struct TrainPlan {
    pub manifest: HyperManifest,
    pub desk: bool,
    pub epochs: Option<usize>,
    pub jobs: usize,
    pub checkpoint_dir: Option<PathBuf>,
    pub policy: CheckpointPolicy,
}

impl TrainPlan {
    pub fn full() -> Self {
        Self {
            manifest: HyperManifest::default(),
            desk: false,
            epochs: None,
            jobs: 1,
            checkpoint_dir: None,
            policy: CheckpointPolicy::BestTrainLoss,
        }
    }

    pub fn desk() -> Self {
        Self { desk: true, ..Self::full() }
    }

    pub fn arch_spec(&self, kind: ArchKind) -> ArchSpec {
        if self.desk {
            self.manifest.desk_spec(kind)
        } else {
            self.manifest.spec(kind)
        }
    }

    pub fn config(&self, kind: ArchKind, n_train: usize, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::from_manifest(&self.manifest, kind, n_train, seed, self.desk);
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        c.checkpoint = self.policy;
        c
    }

    pub fn finetune_config(&self, kind: ArchKind, n_train: usize, seed: u64) -> TrainConfig {
        let mut c = TrainConfig::finetune_from_manifest(&self.manifest, kind, n_train, seed, self.desk);
        if let Some(e) = self.epochs {
            c.epochs = e;
        }
        c.checkpoint = self.policy;
        c
    }

    pub fn checkpoint_name(dataset: &str, kind: ArchKind, seed: u64) -> String {
        format!("{dataset}-{}-seed{seed}.tsce", kind.slug())
    }
}

/// Build and train one member.
pub fn train_member<T: Scalar>(kind: ArchKind, dataset: &TimeSeriesDataset, seed: u64, plan: &TrainPlan) -> Result<TrainedModel<T>> {
    train_member_on(kind, &dataset.name, &dataset.train, dataset.n_classes, seed, plan)
}

/// [`train_member`] from a bare training split, for callers that never load
/// the test split.
pub fn train_member_on<T: Scalar>(
    kind: ArchKind,
    name: &str,
    series: &[TimeSeries],
    n_classes: usize,
    seed: u64,
    plan: &TrainPlan,
) -> Result<TrainedModel<T>> {
    let length = series.first().map_or(0, TimeSeries::len);
    let graph = build_model_with(&plan.arch_spec(kind), length, n_classes, seed)?;
    let model = train_on(graph, series, name, &plan.config(kind, series.len(), seed))?;
    if let Some(dir) = &plan.checkpoint_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        save_checkpoint(&model, &dir.join(TrainPlan::checkpoint_name(name, kind, seed)))?;
    }
    Ok(model)
}

/// Train every `(kind, seed)` pair on the plan's worker pool. Successful
/// members come back in input order; failures are named.
pub fn train_members<T: Scalar>(
    dataset: &TimeSeriesDataset,
    members: &[(ArchKind, u64)],
    plan: &TrainPlan,
) -> (Vec<TrainedModel<T>>, Vec<MemberFailure>) {
    let results = run_jobs(plan.jobs, members.to_vec(), |(kind, seed)| (kind, seed, train_member(kind, dataset, seed, plan)));
    let mut trained = Vec::new();
    let mut failures = Vec::new();
    for (kind, seed, r) in results {
        match r {
            Ok(m) => trained.push(m),
            Err(e) => failures.push(MemberFailure { member: format!("{kind} seed {seed}"), error: e.to_string() }),
        }
    }
    (trained, failures)
}

fn assemble<T: Scalar>(name: String, dataset: &TimeSeriesDataset, members: &[(ArchKind, u64)], plan: &TrainPlan) -> Result<EnsembleSpec<T>> {
    let (trained, failures) = train_members(dataset, members, plan);
    if !failures.is_empty() {
        return Err(Error::Members(failures));
    }
    EnsembleSpec::new(name, trained)
}

pub fn seed_ensemble_name(kind: ArchKind) -> String {
    format!("{kind}-ens")
}

/// One member per seed, ordered by seed.
pub fn build_seed_ensemble<T: Scalar>(kind: ArchKind, dataset: &TimeSeriesDataset, seeds: &[u64], plan: &TrainPlan) -> Result<EnsembleSpec<T>> {
    let unique: BTreeSet<u64> = seeds.iter().copied().collect();
    if unique.len() != seeds.len() {
        return Err(Error::Spec(format!("duplicate seeds in {seeds:?}")));
    }
    let members: Vec<(ArchKind, u64)> = unique.into_iter().map(|s| (kind, s)).collect();
    assemble(seed_ensemble_name(kind), dataset, &members, plan)
}

fn family<T: Scalar>(name: &str, kinds: &[ArchKind], dataset: &TimeSeriesDataset, seeds_per_arch: usize, plan: &TrainPlan) -> Result<EnsembleSpec<T>> {
    if seeds_per_arch == 0 {
        return Err(Error::Spec("need at least one seed per architecture".into()));
    }
    let members: Vec<(ArchKind, u64)> =
        kinds.iter().flat_map(|&k| (0..seeds_per_arch as u64).map(move |s| (k, s))).collect();
    assemble(name.to_string(), dataset, &members, plan)
}

/// All six architectures, seeds `0..seeds_per_arch` each.
pub fn build_full_ensemble<T: Scalar>(dataset: &TimeSeriesDataset, seeds_per_arch: usize, plan: &TrainPlan) -> Result<EnsembleSpec<T>> {
    family("ALL", &ArchKind::ALL, dataset, seeds_per_arch, plan)
}

/// ResNet, FCN and Encoder, seeds `0..seeds_per_arch` each.
pub fn build_nne<T: Scalar>(dataset: &TimeSeriesDataset, seeds_per_arch: usize, plan: &TrainPlan) -> Result<EnsembleSpec<T>> {
    family("NNE", &ArchKind::NNE, dataset, seeds_per_arch, plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct WinTieLoss {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
}

/// Count datasets where `a` beats, ties or loses to `b`. Both sides list
/// `(dataset, accuracy)` over the same datasets in the same order; ties
/// compare the stored decimals exactly.
pub fn pairwise_record(a: &[(String, Accuracy)], b: &[(String, Accuracy)]) -> Result<WinTieLoss> {
    if a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.0 != y.0) {
        return Err(Error::Spec("pairwise record needs the same dataset list on both sides".into()));
    }
    let mut r = WinTieLoss::default();
    for ((_, x), (_, y)) in a.iter().zip(b) {
        match x.cmp(y) {
            std::cmp::Ordering::Greater => r.wins += 1,
            std::cmp::Ordering::Equal => r.ties += 1,
            std::cmp::Ordering::Less => r.losses += 1,
        }
    }
    Ok(r)
}
