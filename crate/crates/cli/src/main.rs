use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tsc_ensemble::arch::{ArchKind, HyperManifest};
use tsc_ensemble::data::synthetic::{SynthConfig, SynthKind};
use tsc_ensemble::stats::DEFAULT_ALPHA;
use tsc_ensemble::training::CheckpointPolicy;
use tsce_cli::{
    rerun, run_command, CdDiagramArgs, Command, CompareArgs, DataArgs, EnsembleArgs, EvaluateArgs, Failure, Outcome, PlanArgs,
    RunManifest, SynthArgs, TrainArgs, TransferArgs,
};

/// Deep-learning ensembles for time series classification.
///
/// Every run writes a JSON run manifest (see --manifest) holding the fully
/// resolved command, seeds, and SHA-256 digests of all files read and
/// written. `tsce rerun <manifest>` repeats a run and checks that every
/// output is byte-identical.
///
/// Exit codes: 0 success, 1 runtime failure, 2 usage error.
#[derive(Parser, Debug)]
#[command(name = "tsce", version)]
struct Cli {
    /// Where to write the run manifest [default: next to the command's outputs]
    #[arg(long, global = true, value_name = "FILE")]
    manifest: Option<PathBuf>,

    /// Maximum number of concurrent training or fine-tuning workers
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Desk profile: cap epochs and shrink layer widths for quick runs
    #[arg(long, global = true)]
    desk: bool,

    /// Hyperparameter manifest (TOML); missing keys keep the built-in values
    #[arg(long, global = true, value_name = "FILE")]
    hyperparams: Option<PathBuf>,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct DataOpts {
    /// Directory holding <NAME>/<NAME>_TRAIN.tsv and _TEST.tsv (or the files directly)
    #[arg(long, env = "TSCE_DATA_DIR", value_name = "DIR")]
    data_dir: PathBuf,

    /// Dataset name
    #[arg(long, value_name = "NAME")]
    dataset: String,

    /// Keep series as read instead of z-normalizing each one
    #[arg(long)]
    no_znorm: bool,
}

#[derive(Args, Debug)]
struct TrainingOpts {
    /// Override the epoch budget of the selected profile
    #[arg(long)]
    epochs: Option<usize>,

    /// Which parameters to keep at the end of training
    #[arg(long, value_enum, default_value_t = Policy::BestTrainLoss)]
    policy: Policy,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Policy {
    /// Parameters from the epoch with the lowest training loss
    BestTrainLoss,
    /// Parameters after the last epoch
    Final,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train one architecture for one or more seeds on the training split
    Train {
        #[command(flatten)]
        data: DataOpts,
        /// Architecture: mlp, fcn, resnet, encoder, mcdcnn or timecnn
        #[arg(long, value_parser = parse_arch)]
        arch: ArchKind,
        /// Seed for weights and training (repeatable)
        #[arg(long = "seed", conflicts_with = "n_seeds")]
        seeds: Vec<u64>,
        /// Train seeds 0..N
        #[arg(long = "seeds", value_name = "N")]
        n_seeds: Option<u64>,
        #[command(flatten)]
        training: TrainingOpts,
        /// Output directory for checkpoints and the ensemble manifest
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Evaluate an ensemble manifest on the test split and record its accuracy
    Ensemble {
        #[command(flatten)]
        data: DataOpts,
        /// Ensemble manifest listing member checkpoints
        #[arg(long, value_name = "FILE")]
        members: PathBuf,
        /// Row name [default: the manifest's name]
        #[arg(long)]
        name: Option<String>,
        /// Accuracy table to update [default: accuracy-<NAME>.csv next to the manifest]
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
    },
    /// Evaluate a single checkpoint on the test split
    Evaluate {
        #[command(flatten)]
        data: DataOpts,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        /// Row name [default: the architecture name]
        #[arg(long)]
        name: Option<String>,
        /// Also record the accuracy in this table
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
    },
    /// Fine-tune source checkpoints on a target dataset and ensemble them
    Transfer {
        #[command(flatten)]
        data: DataOpts,
        /// Directory of source .tsce checkpoints
        #[arg(long, value_name = "DIR")]
        sources: PathBuf,
        /// Architectures to transfer besides FCN (resnet, encoder, mlp, mcdcnn)
        #[arg(long = "allow-arch", value_parser = parse_arch)]
        allow: Vec<ArchKind>,
        /// Base seed; source i uses seed + i for its new head and training
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        training: TrainingOpts,
        /// Save fine-tuned checkpoints and an ensemble manifest here
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
        /// Accuracy table to update [default: accuracy-<NAME>.csv in --out or the source dir]
        #[arg(long, value_name = "FILE")]
        table: Option<PathBuf>,
    },
    /// Rank classifiers, run the significance tests and draw the diagram
    Compare {
        /// Accuracy tables (CSV) over disjoint datasets, joined before testing
        #[arg(required = true, value_name = "TABLE")]
        tables: Vec<PathBuf>,
        /// Family-wise significance level
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Output directory for report.json, cd.svg and cd.txt
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Redraw cd.svg and cd.txt from a saved report.json
    CdDiagram {
        #[arg(value_name = "REPORT")]
        report: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Write the built-in synthetic datasets in archive layout
    Synth {
        /// sine-bump, sine-two-bumps or noisy-sine-bump (repeatable) [default: all]
        #[arg(long = "kind", value_parser = parse_kind)]
        kinds: Vec<SynthKind>,
        #[arg(long, default_value_t = SynthConfig::default().length)]
        length: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_train)]
        n_train: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_test)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Repeat the run recorded in a manifest and verify its outputs
    Rerun {
        #[arg(value_name = "MANIFEST")]
        recorded: PathBuf,
    },
}

fn parse_arch(s: &str) -> Result<ArchKind, String> {
    s.parse().map_err(|e: tsc_ensemble::Error| e.to_string())
}

fn parse_kind(s: &str) -> Result<SynthKind, String> {
    s.parse().map_err(|e: tsc_ensemble::Error| e.to_string())
}

fn absolute(p: &Path) -> Outcome<PathBuf> {
    std::path::absolute(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

impl DataOpts {
    fn resolve(self) -> Outcome<DataArgs> {
        Ok(DataArgs { data_dir: absolute(&self.data_dir)?, dataset: self.dataset, z_normalize: !self.no_znorm })
    }
}

impl Cli {
    fn hyper(&self) -> Outcome<HyperManifest> {
        match &self.hyperparams {
            Some(p) => HyperManifest::load(p).map_err(|e| Failure::Usage(e.to_string())),
            None => Ok(HyperManifest::default()),
        }
    }

    fn plan(&self, t: &TrainingOpts) -> Outcome<PlanArgs> {
        if self.jobs == 0 {
            return Err(Failure::Usage("--jobs must be at least 1".into()));
        }
        let policy = match t.policy {
            Policy::BestTrainLoss => CheckpointPolicy::BestTrainLoss,
            Policy::Final => CheckpointPolicy::Final,
        };
        Ok(PlanArgs { hyperparams: self.hyper()?, desk: self.desk, epochs: t.epochs, policy, jobs: self.jobs })
    }
}

fn table_default(table: Option<PathBuf>, dir: &Path, dataset: &str) -> Outcome<PathBuf> {
    absolute(&table.unwrap_or_else(|| dir.join(format!("accuracy-{dataset}.csv"))))
}

/// Turn parsed arguments into a fully resolved command.
fn resolve(cli: Cli) -> Outcome<Option<Command>> {
    let command = match &cli.command {
        Cmd::Rerun { .. } => return Ok(None),
        Cmd::Train { training, .. } | Cmd::Transfer { training, .. } => Some(cli.plan(training)?),
        _ => None,
    };
    let plan = command;
    Ok(Some(match cli.command {
        Cmd::Train { data, arch, seeds, n_seeds, out, .. } => {
            let seeds = match n_seeds {
                Some(n) => (0..n).collect(),
                None if seeds.is_empty() => vec![0],
                None => seeds,
            };
            Command::Train(TrainArgs { data: data.resolve()?, arch, seeds, plan: plan.expect("resolved"), out_dir: absolute(&out)? })
        }
        Cmd::Ensemble { data, members, name, table } => {
            let members = absolute(&members)?;
            let dir = members.parent().map(Path::to_path_buf).unwrap_or_default();
            let table = table_default(table, &dir, &data.dataset)?;
            Command::Ensemble(EnsembleArgs { data: data.resolve()?, members, name, table })
        }
        Cmd::Evaluate { data, checkpoint, name, table } => Command::Evaluate(EvaluateArgs {
            data: data.resolve()?,
            checkpoint: absolute(&checkpoint)?,
            name,
            table: table.map(|t| absolute(&t)).transpose()?,
        }),
        Cmd::Transfer { data, sources, allow, seed, out, table, .. } => {
            let sources = absolute(&sources)?;
            let out = out.map(|o| absolute(&o)).transpose()?;
            let table = table_default(table, out.as_deref().unwrap_or(&sources), &data.dataset)?;
            let mut allow: Vec<ArchKind> = std::iter::once(ArchKind::Fcn).chain(allow).collect();
            allow.sort();
            allow.dedup();
            Command::Transfer(TransferArgs { data: data.resolve()?, sources, allow, seed, plan: plan.expect("resolved"), out_dir: out, table })
        }
        Cmd::Compare { tables, alpha, out } => Command::Compare(CompareArgs {
            tables: tables.iter().map(|t| absolute(t)).collect::<Outcome<_>>()?,
            alpha,
            out_dir: absolute(&out)?,
        }),
        Cmd::CdDiagram { report, out } => Command::CdDiagram(CdDiagramArgs { report: absolute(&report)?, out_dir: absolute(&out)? }),
        Cmd::Synth { kinds, length, n_train, n_test, seed, out } => Command::Synth(SynthArgs {
            kinds: if kinds.is_empty() { SynthKind::ALL.to_vec() } else { kinds },
            config: SynthConfig { length, n_train, n_test, seed },
            out_dir: absolute(&out)?,
        }),
        Cmd::Rerun { .. } => unreachable!("handled above"),
    }))
}

fn run(cli: Cli) -> Outcome<(RunManifest, PathBuf)> {
    let manifest_path = cli.manifest.as_deref().map(absolute).transpose()?;
    if let Cmd::Rerun { recorded } = &cli.command {
        let source = absolute(recorded)?;
        let m = rerun(&source)?;
        let path = manifest_path.unwrap_or_else(|| source.with_extension("rerun.json"));
        return Ok((m, path));
    }
    let command = resolve(cli)?.expect("not a rerun");
    let path = manifest_path.unwrap_or_else(|| command.default_manifest_path());
    Ok((run_command(command)?, path))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok((manifest, path)) => {
            for w in &manifest.warnings {
                eprintln!("warning: {w}");
            }
            for m in &manifest.messages {
                println!("{m}");
            }
            if let Err(e) = manifest.save(&path) {
                eprintln!("error: {e}");
                return ExitCode::from(1);
            }
            println!("run manifest: {}", path.display());
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code() as u8)
        }
    }
}
