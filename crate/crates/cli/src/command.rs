use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsc_ensemble::arch::{ArchKind, HyperManifest};
use tsc_ensemble::data::synthetic::{generate, SynthConfig, SynthKind};
use tsc_ensemble::data::{
    find_split_file, load_ucr_dataset_with, load_ucr_split, write_ucr_split, Accuracy, AccuracyTable, LoadOptions, Split,
    TimeSeriesDataset,
};
use tsc_ensemble::ensemble::{evaluate_ensemble, seed_ensemble_name, train_member_on, EnsembleManifest, EnsembleSpec, TrainPlan};
use tsc_ensemble::stats::{compare, render_cd_diagram, CdDiagram, StatReport};
use tsc_ensemble::training::{evaluate, load_checkpoint, save_checkpoint, CheckpointPolicy, TrainedModel};
use tsc_ensemble::transfer::build_transfer_ensemble;
use tsc_ensemble::util::run_jobs;
use tsc_ensemble::{Error, MemberFailure};

use crate::manifest::IoTrace;
use crate::{input_failure, usage, Failure, Outcome};

/// Where a dataset lives: `<data_dir>/<dataset>/<dataset>_TRAIN.tsv` or
/// directly in `data_dir`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataArgs {
    pub data_dir: PathBuf,
    pub dataset: String,
    pub z_normalize: bool,
}

impl DataArgs {
    fn options(&self) -> LoadOptions {
        LoadOptions { z_normalize: self.z_normalize }
    }

    fn path(&self, split: Split) -> Outcome<PathBuf> {
        Ok(find_split_file(&self.data_dir, &self.dataset, split)?)
    }

    fn load(&self, trace: &mut IoTrace) -> Outcome<TimeSeriesDataset> {
        let train = self.path(Split::Train)?;
        let test = self.path(Split::Test)?;
        trace.read(&train)?;
        trace.read(&test)?;
        let mut ds = load_ucr_dataset_with(&train, &test, self.options()).map_err(input_failure)?;
        ds.name = self.dataset.clone();
        Ok(ds)
    }
}

/// Resolved training settings shared by `train` and `transfer`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanArgs {
    pub hyperparams: HyperManifest,
    pub desk: bool,
    pub epochs: Option<usize>,
    pub policy: CheckpointPolicy,
    pub jobs: usize,
}

impl PlanArgs {
    fn plan(&self) -> TrainPlan {
        TrainPlan {
            manifest: self.hyperparams.clone(),
            desk: self.desk,
            epochs: self.epochs,
            jobs: self.jobs,
            checkpoint_dir: None,
            policy: self.policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainArgs {
    pub data: DataArgs,
    pub arch: ArchKind,
    pub seeds: Vec<u64>,
    pub plan: PlanArgs,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleArgs {
    pub data: DataArgs,
    pub members: PathBuf,
    pub name: Option<String>,
    pub table: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluateArgs {
    pub data: DataArgs,
    pub checkpoint: PathBuf,
    pub name: Option<String>,
    pub table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferArgs {
    pub data: DataArgs,
    pub sources: PathBuf,
    pub allow: Vec<ArchKind>,
    pub seed: u64,
    pub plan: PlanArgs,
    pub out_dir: Option<PathBuf>,
    pub table: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareArgs {
    pub tables: Vec<PathBuf>,
    pub alpha: f64,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CdDiagramArgs {
    pub report: PathBuf,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthArgs {
    pub kinds: Vec<SynthKind>,
    pub config: SynthConfig,
    pub out_dir: PathBuf,
}

/// One fully resolved invocation. Every path is absolute and every default
/// is filled in, so the value alone reproduces the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Command {
    Train(TrainArgs),
    Ensemble(EnsembleArgs),
    Evaluate(EvaluateArgs),
    Transfer(TransferArgs),
    Compare(CompareArgs),
    CdDiagram(CdDiagramArgs),
    Synth(SynthArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Train(_) => "train",
            Command::Ensemble(_) => "ensemble",
            Command::Evaluate(_) => "evaluate",
            Command::Transfer(_) => "transfer",
            Command::Compare(_) => "compare",
            Command::CdDiagram(_) => "cd-diagram",
            Command::Synth(_) => "synth",
        }
    }

    pub fn seeds(&self) -> Vec<u64> {
        match self {
            Command::Train(a) => a.seeds.clone(),
            Command::Transfer(a) => vec![a.seed],
            Command::Synth(a) => vec![a.config.seed],
            _ => Vec::new(),
        }
    }

    /// Directory the run manifest goes to when none is given.
    pub fn default_manifest_path(&self) -> PathBuf {
        let dir = match self {
            Command::Train(a) => a.out_dir.clone(),
            Command::Ensemble(a) => parent(&a.table),
            Command::Evaluate(a) => a.table.as_deref().map_or_else(|| parent(&a.checkpoint), parent),
            Command::Transfer(a) => a.out_dir.clone().unwrap_or_else(|| parent(&a.table)),
            Command::Compare(a) => a.out_dir.clone(),
            Command::CdDiagram(a) => a.out_dir.clone(),
            Command::Synth(a) => a.out_dir.clone(),
        };
        let stem = match self {
            Command::Train(a) => format!("train-{}-{}", a.data.dataset, a.arch.slug()),
            Command::Ensemble(a) => format!("ensemble-{}", a.data.dataset),
            Command::Evaluate(a) => format!("evaluate-{}", a.data.dataset),
            Command::Transfer(a) => format!("transfer-{}", a.data.dataset),
            other => other.name().to_string(),
        };
        dir.join(format!("{stem}.run.json"))
    }
}

fn parent(p: &Path) -> PathBuf {
    p.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
}

fn create_dir(dir: &Path) -> Outcome<()> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Runtime(Error::Io { path: dir.to_path_buf(), source: e }))
}

/// Run a command, recording every file it reads and writes.
pub fn execute(command: &Command, trace: &mut IoTrace) -> Outcome<()> {
    match command {
        Command::Train(a) => train(a, trace),
        Command::Ensemble(a) => ensemble(a, trace),
        Command::Evaluate(a) => evaluate_cmd(a, trace),
        Command::Transfer(a) => transfer(a, trace),
        Command::Compare(a) => compare_cmd(a, trace),
        Command::CdDiagram(a) => cd_diagram(a, trace),
        Command::Synth(a) => synth(a, trace),
    }
}

fn train(a: &TrainArgs, trace: &mut IoTrace) -> Outcome<()> {
    if a.seeds.is_empty() {
        return Err(usage("train needs at least one seed"));
    }
    let mut seeds = a.seeds.clone();
    seeds.sort_unstable();
    if seeds.windows(2).any(|w| w[0] == w[1]) {
        return Err(usage(format!("duplicate seeds in {:?}", a.seeds)));
    }
    // only the training split is opened
    let path = a.data.path(Split::Train)?;
    trace.read(&path)?;
    let (series, labels) = load_ucr_split(&path, a.data.options()).map_err(input_failure)?;
    create_dir(&a.out_dir)?;
    let plan = a.plan.plan();
    let member_plan = TrainPlan { jobs: 1, ..plan.clone() };
    let results = run_jobs(plan.jobs, seeds.clone(), |seed| {
        train_member_on::<f64>(a.arch, &a.data.dataset, &series, labels.n_classes(), seed, &member_plan).map(|m| (seed, m))
    });
    let mut checkpoints = Vec::new();
    let mut failures = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok((seed, model)) => {
                let path = a.out_dir.join(TrainPlan::checkpoint_name(&a.data.dataset, a.arch, seed));
                save_checkpoint(&model, &path)?;
                trace.wrote(&path)?;
                let last = model.history.last().map_or(f64::NAN, |h| h.loss);
                trace.say(format!("{} seed {seed}: final train loss {last:.6}, kept epoch {:?}", a.arch, model.selected_epoch));
                checkpoints.push(path);
            }
            Err(e) => failures.push(MemberFailure { member: format!("{} seed {seed}", a.arch), error: e.to_string() }),
        }
    }
    if !failures.is_empty() {
        return Err(Failure::Runtime(Error::Members(failures)));
    }
    let manifest = EnsembleManifest { name: seed_ensemble_name(a.arch), checkpoints };
    let path = a.out_dir.join(format!("{}-{}.ens", a.data.dataset, a.arch.slug()));
    manifest.save(&path)?;
    trace.wrote(&path)?;
    Ok(())
}

/// Insert or replace `row` in the per-dataset accuracy table at `path`.
fn upsert(path: &Path, row: &str, dataset: &str, acc: Accuracy, trace: &mut IoTrace) -> Outcome<()> {
    let cells = [(dataset.to_string(), acc.clone())];
    let table = if path.exists() {
        trace.read(path)?;
        let mut t = AccuracyTable::load(path).map_err(input_failure)?;
        t.upsert_row(row, &cells).map_err(input_failure)?;
        t
    } else {
        AccuracyTable::new(vec![row.to_string()], vec![dataset.to_string()], vec![vec![acc]])?
    };
    if let Some(dir) = path.parent() {
        create_dir(dir)?;
    }
    table.save(path)?;
    trace.wrote(path)?;
    Ok(())
}

fn ensemble(a: &EnsembleArgs, trace: &mut IoTrace) -> Outcome<()> {
    trace.read(&a.members)?;
    let manifest = EnsembleManifest::load(&a.members).map_err(input_failure)?;
    for c in &manifest.checkpoints {
        trace.read(c)?;
    }
    let mut spec: EnsembleSpec<f64> = manifest.load_ensemble()?;
    if let Some(name) = &a.name {
        spec.name = name.clone();
    }
    let ds = a.data.load(trace)?;
    let eval = evaluate_ensemble(&spec, &ds.test)?;
    trace.say(format!("{} ({} members) on {}: {}/{} = {}", spec.name, spec.len(), ds.name, eval.correct, eval.total, eval.accuracy));
    upsert(&a.table, &spec.name, &ds.name, eval.accuracy, trace)
}

fn evaluate_cmd(a: &EvaluateArgs, trace: &mut IoTrace) -> Outcome<()> {
    trace.read(&a.checkpoint)?;
    let model: TrainedModel<f64> = load_checkpoint(&a.checkpoint).map_err(input_failure)?;
    let ds = a.data.load(trace)?;
    let eval = evaluate(&model, &ds.test)?;
    let name = a.name.clone().unwrap_or_else(|| model.kind().to_string());
    trace.say(format!("{name} on {}: {}/{} = {} (mean loss {:.6})", ds.name, eval.correct, eval.total, eval.accuracy, eval.mean_loss));
    if let Some(table) = &a.table {
        upsert(table, &name, &ds.name, eval.accuracy, trace)?;
    }
    Ok(())
}

fn transfer(a: &TransferArgs, trace: &mut IoTrace) -> Outcome<()> {
    let entries = std::fs::read_dir(&a.sources).map_err(|e| Failure::Runtime(Error::Io { path: a.sources.clone(), source: e }))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "tsce"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(usage(format!("no .tsce checkpoints in {}", a.sources.display())));
    }
    let mut sources = Vec::new();
    for p in &paths {
        trace.read(p)?;
        let m: TrainedModel<f64> = load_checkpoint(p)?;
        let file = p.file_name().map_or_else(String::new, |f| f.to_string_lossy().into_owned());
        if m.kind() == ArchKind::TimeCnn {
            trace.warn(format!("skipped {file}: Time-CNN has no softmax head to replace"));
        } else if !a.allow.contains(&m.kind()) {
            trace.warn(format!("skipped {file}: {} transfer not enabled (see --allow-arch)", m.kind()));
        } else if m.dataset == a.data.dataset {
            trace.warn(format!("skipped {file}: trained on the target dataset"));
        } else {
            sources.push(m);
        }
    }
    if sources.is_empty() {
        return Err(usage(format!("no adaptable source checkpoints in {}", a.sources.display())));
    }
    let ds = a.data.load(trace)?;
    let (spec, failures) = build_transfer_ensemble(&sources, &ds, &a.plan.plan(), a.seed)?;
    for f in &failures {
        trace.warn(format!("{} failed: {}", f.member, f.error));
    }
    if let Some(dir) = &a.out_dir {
        create_dir(dir)?;
        let mut checkpoints = Vec::new();
        for m in spec.members() {
            let prov = m.provenance.as_ref().expect("fine-tuned members carry provenance");
            let path = dir.join(format!(
                "{}-{}-from-{}-seed{}.tsce",
                ds.name,
                m.kind().slug(),
                prov.source_dataset,
                prov.source_arch_seed
            ));
            save_checkpoint(m, &path)?;
            trace.wrote(&path)?;
            checkpoints.push(path);
        }
        let manifest = EnsembleManifest { name: spec.name.clone(), checkpoints };
        let path = dir.join(format!("{}-transfer.ens", ds.name));
        manifest.save(&path)?;
        trace.wrote(&path)?;
    }
    let eval = evaluate_ensemble(&spec, &ds.test)?;
    trace.say(format!("{} (n={}) on {}: {}/{} = {}", spec.name, spec.len(), ds.name, eval.correct, eval.total, eval.accuracy));
    upsert(&a.table, &spec.name, &ds.name, eval.accuracy, trace)
}

fn compare_cmd(a: &CompareArgs, trace: &mut IoTrace) -> Outcome<()> {
    if a.tables.is_empty() {
        return Err(usage("compare needs at least one accuracy table"));
    }
    let mut tables = Vec::new();
    for p in &a.tables {
        trace.read(p)?;
        let t = AccuracyTable::load(p).map_err(|e| match e {
            Error::Io { .. } => Failure::Runtime(e),
            other => usage(format!("{}: {other}", p.display())),
        })?;
        tables.push(t);
    }
    let table = AccuracyTable::join(&tables).map_err(input_failure)?;
    let (report, diagram) = compare(&table, a.alpha).map_err(input_failure)?;
    for n in &report.notices {
        trace.warn(n.clone());
    }
    trace.say(format!("rank order: {}", report.rank_order.join(" < ")));
    create_dir(&a.out_dir)?;
    let path = a.out_dir.join("report.json");
    report.save(&path)?;
    trace.wrote(&path)?;
    write_diagram(&diagram, &a.out_dir, trace)
}

fn write_diagram(d: &CdDiagram, dir: &Path, trace: &mut IoTrace) -> Outcome<()> {
    render_cd_diagram(d, dir)?;
    trace.wrote(&dir.join("cd.svg"))?;
    trace.wrote(&dir.join("cd.txt"))?;
    Ok(())
}

/// Rebuild the diagram from a saved report.
pub fn diagram_from_report(report: &StatReport) -> Result<CdDiagram, Error> {
    let classifiers = report.rank_order.clone();
    let average_ranks = classifiers
        .iter()
        .map(|c| {
            let i = report.classifiers.iter().position(|x| x == c);
            i.and_then(|i| report.average_ranks.get(i).copied())
                .ok_or_else(|| Error::Format(format!("report has no rank for {c}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let cliques = report
        .cliques
        .iter()
        .map(|names| {
            names
                .iter()
                .map(|n| classifiers.iter().position(|c| c == n).ok_or_else(|| Error::Format(format!("clique names unknown {n}"))))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(CdDiagram { classifiers, average_ranks, cliques })
}

fn cd_diagram(a: &CdDiagramArgs, trace: &mut IoTrace) -> Outcome<()> {
    trace.read(&a.report)?;
    let text = std::fs::read_to_string(&a.report).map_err(|e| Failure::Runtime(Error::Io { path: a.report.clone(), source: e }))?;
    let report: StatReport = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", a.report.display())))?;
    let diagram = diagram_from_report(&report).map_err(input_failure)?;
    create_dir(&a.out_dir)?;
    write_diagram(&diagram, &a.out_dir, trace)
}

fn synth(a: &SynthArgs, trace: &mut IoTrace) -> Outcome<()> {
    if a.kinds.is_empty() {
        return Err(usage("synth needs at least one dataset kind"));
    }
    for &kind in &a.kinds {
        let ds = generate(kind, &a.config).map_err(input_failure)?;
        let dir = a.out_dir.join(&ds.name);
        create_dir(&dir)?;
        for (split, series) in [("TRAIN", &ds.train), ("TEST", &ds.test)] {
            let path = dir.join(format!("{}_{split}.tsv", ds.name));
            write_ucr_split(&path, series)?;
            trace.wrote(&path)?;
        }
        trace.say(format!("{}: {} train, {} test, length {}", ds.name, ds.train.len(), ds.test.len(), ds.series_length));
    }
    Ok(())
}
