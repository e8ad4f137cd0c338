//! Transfer learning: swap the classification head of a trained model for a
//! fresh one sized to a new dataset, then fine-tune the whole network.

use crate::arch::{build_model_with, ArchKind, ModelGraph};
use crate::data::TimeSeriesDataset;
use crate::ensemble::{EnsembleSpec, TrainPlan};
use crate::error::{Error, MemberFailure, Result};
use crate::nn::{Dense, Layer, LayerKind};
use crate::rng::run_rng;
use crate::scalar::Scalar;
use crate::training::{fit, Provenance, TrainConfig, TrainedModel};
use crate::util::run_jobs;

/// Copy of the source graph whose final dense layer is replaced by a
/// Glorot-initialized one with `n_classes` outputs drawn from `seed`. Every
/// other tensor, batch-norm statistics included, is kept as is.
pub fn adapt_head<T: Scalar>(source: &TrainedModel<T>, n_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
    let mut graph = source.graph.clone();
    let kinds = graph.layer_kinds();
    if graph.kind() == ArchKind::TimeCnn || kinds.last() != Some(&LayerKind::Softmax) {
        return Err(Error::Unsupported(format!("{} has no dense + softmax head to replace", graph.kind())));
    }
    if n_classes < 2 {
        return Err(Error::Domain(format!("need at least 2 target classes, got {n_classes}")));
    }
    let head = graph.head_index().filter(|&h| h + 2 == kinds.len());
    let head = head.ok_or_else(|| Error::Unsupported("final softmax is not fed by a dense layer".into()))?;
    let Layer::Dense(old) = &graph.nodes[head].layer else { unreachable!("head index points at a dense layer") };
    let inputs = old.weight.shape()[1];
    graph.nodes[head].layer = Layer::Dense(Dense::new(inputs, n_classes, &mut run_rng(seed))?);
    graph.n_classes = n_classes;
    Ok(graph)
}

/// A fine-tuning run of one source model on a target dataset.
pub struct TransferJob<'a, T> {
    pub source: &'a TrainedModel<T>,
    pub target: &'a TimeSeriesDataset,
    pub config: TrainConfig,
    pub head_seed: u64,
}

/// Replace the head and retrain every weight on the target training split.
/// Zero epochs returns the adapted model untouched; otherwise batch-norm
/// running statistics are reset before training.
pub fn fine_tune<T: Scalar>(job: &TransferJob<'_, T>) -> Result<TrainedModel<T>> {
    let source = job.source;
    let target = job.target;
    let mut graph = adapt_head(source, target.n_classes, job.head_seed)?;
    if target.series_length != graph.input_length() {
        if !graph.kind().is_length_invariant() {
            return Err(Error::Shape(format!(
                "{} source of length {} cannot take length-{} target series",
                graph.kind(),
                graph.input_length(),
                target.series_length
            )));
        }
        build_model_with::<T>(graph.spec(), target.series_length, target.n_classes, 0)?;
        graph.input_length = target.series_length;
    }
    if job.config.epochs > 0 {
        for node in &mut graph.nodes {
            if let Layer::BatchNorm(bn) = &mut node.layer {
                bn.reset_running_stats();
            }
        }
    }
    let mut tuned = fit(graph, &target.train, &target.name, &job.config)?;
    tuned.provenance = Some(Provenance {
        source_dataset: source.dataset.clone(),
        target_dataset: target.name.clone(),
        source_arch_seed: source.arch_seed(),
        head_seed: job.head_seed,
    });
    Ok(tuned)
}

pub fn transfer_ensemble_name<T: Scalar>(sources: &[TrainedModel<T>]) -> String {
    match sources.first().map(TrainedModel::kind) {
        Some(k) if sources.iter().all(|s| s.kind() == k) => format!("{k}-transfer-ens"),
        _ => "transfer-ens".to_string(),
    }
}

/// Fine-tune every source on the target (source `i` uses seed `seed + i`
/// for its head and training run) and average the survivors.
pub fn build_transfer_ensemble<T: Scalar>(
    sources: &[TrainedModel<T>],
    target: &TimeSeriesDataset,
    plan: &TrainPlan,
    seed: u64,
) -> Result<(EnsembleSpec<T>, Vec<MemberFailure>)> {
    if sources.is_empty() {
        return Err(Error::Spec("transfer ensemble needs at least one source model".into()));
    }
    let jobs: Vec<(usize, &TrainedModel<T>)> = sources.iter().enumerate().collect();
    let results = run_jobs(plan.jobs, jobs, |(i, source)| {
        let s = seed + i as u64;
        let config = plan.finetune_config(source.kind(), target.train.len(), s);
        fine_tune(&TransferJob { source, target, config, head_seed: s })
            .map_err(|e| MemberFailure { member: format!("{} from {} (seed {})", source.kind(), source.dataset, source.arch_seed()), error: e.to_string() })
    });
    let (mut members, mut failures) = (Vec::new(), Vec::new());
    for r in results {
        match r {
            Ok(m) => members.push(m),
            Err(f) => failures.push(f),
        }
    }
    if members.is_empty() {
        return Err(Error::Members(failures));
    }
    Ok((EnsembleSpec::new(transfer_ensemble_name(sources), members)?, failures))
}
