//! Command-line front end.
//!
//! Every run resolves its arguments into a [`RunConfig`], writes it as
//! `run.json` in the output directory, then executes it. `rerun` replays
//! such a manifest.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, SynthConfig};
use crate::error::{Error, Result};
use crate::fusion::{self, Criterion, Standardizer};
use crate::kinematics::{Channel, RESAMPLED_LEN};
use crate::protocol::{
    self, BlockFit, ClassSubset, FeatureCache, PipelineSpec, Representation, TwoLayerConfig,
};
use crate::svm::{self, TrainInput};

pub const RUN_MANIFEST: &str = "run.json";

/// Where trials come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    Manifest { path: PathBuf },
    Synthetic { config: SynthConfig },
}

impl DataSource {
    pub fn load(&self) -> Result<Dataset> {
        match self {
            DataSource::Manifest { path } => {
                let path = if path.is_dir() { path.join("manifest.json") } else { path.clone() };
                data::load_dataset(&path)
            }
            DataSource::Synthetic { config } => data::generate_synthetic(config),
        }
    }
}

/// Block exported or inspected by the feature commands.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExportBlock {
    Fk,
    Fglobal,
    Flocal,
    Cov,
    Hcov,
}

impl ExportBlock {
    fn block(self) -> protocol::Block {
        match self {
            ExportBlock::Fk => protocol::Block::Fk,
            ExportBlock::Fglobal => protocol::Block::Fglobal,
            ExportBlock::Flocal => protocol::Block::Flocal,
            ExportBlock::Cov => protocol::Block::Cov,
            ExportBlock::Hcov => protocol::Block::Hcov,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ExportBlock::Fk => "fk",
            ExportBlock::Fglobal => "fglobal",
            ExportBlock::Flocal => "flocal",
            ExportBlock::Cov => "cov",
            ExportBlock::Hcov => "hcov",
        }
    }

    fn parse(s: &str) -> std::result::Result<Self, String> {
        match s {
            "fk" => Ok(ExportBlock::Fk),
            "fglobal" => Ok(ExportBlock::Fglobal),
            "flocal" => Ok(ExportBlock::Flocal),
            "cov" => Ok(ExportBlock::Cov),
            "hcov" => Ok(ExportBlock::Hcov),
            _ => Err(format!("`{s}` is not one of fk, fglobal, flocal, cov, hcov")),
        }
    }
}

/// Fully resolved work item; all defaults expanded.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "kebab-case")]
pub enum Task {
    Synth {
        config: SynthConfig,
    },
    Featurize {
        data: DataSource,
        spec: PipelineSpec,
        fraction: Option<f64>,
    },
    Eval {
        data: DataSource,
        spec: PipelineSpec,
        comparisons: Vec<ClassSubset>,
    },
    Snippet {
        data: DataSource,
        spec: PipelineSpec,
        fractions: Vec<f64>,
        comparisons: Vec<ClassSubset>,
    },
    Fuse {
        data: DataSource,
        specs: Vec<PipelineSpec>,
        comparisons: Vec<ClassSubset>,
    },
    TwoLayer {
        data: DataSource,
        config: TwoLayerConfig,
    },
    InspectWeights {
        data: DataSource,
        spec: PipelineSpec,
        block: ExportBlock,
        threshold: f64,
    },
    ExportEmbeddingInput {
        data: DataSource,
        spec: PipelineSpec,
        block: ExportBlock,
        fraction: Option<f64>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: Task,
    /// Worker threads; 0 uses the rayon default.
    pub jobs: usize,
}

#[derive(Parser, Debug)]
#[command(name = "ifm", about = "Intention prediction from reach-to-grasp marker trajectories")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Dataset manifest (or the directory holding manifest.json).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Generate the dataset in memory instead.
    #[arg(long, conflicts_with = "dataset")]
    synthetic: bool,
    #[command(flatten)]
    synth: SynthArgs,
}

#[derive(Args, Debug, Clone)]
struct SynthArgs {
    #[arg(long)]
    subjects: Option<usize>,
    #[arg(long)]
    trials_per_cell: Option<usize>,
    #[arg(long)]
    intention_effect: Option<f64>,
    #[arg(long)]
    subject_effect: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    /// Generator seed.
    #[arg(long)]
    data_seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Caps concurrent folds.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    #[arg(long, default_value = "fk")]
    pipeline: String,
    /// JSON pipeline spec; overrides --pipeline.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Soft-margin constant.
    #[arg(long)]
    c: Option<f64>,
    /// Late-fusion weighting criterion, acc or mse.
    #[arg(long)]
    criterion: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        synth: SynthArgs,
    },
    /// Write per-trial feature CSVs.
    Featurize {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// LOSO evaluation of one pipeline over the requested comparisons.
    Eval {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        spec: SpecArgs,
        /// `all` for the seven-comparison suite, `all-class`, or `A,B`.
        #[arg(long, default_value = "all")]
        pairs: String,
    },
    /// LOSO evaluation on movement snippets.
    Snippet {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value = "all")]
        pairs: String,
        #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1.0")]
        fractions: Vec<f64>,
    },
    /// Early (CMIM, PCA) and late (ACC, MSE) fusion evaluation.
    Fuse {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "all")]
        pairs: String,
    },
    /// Subject routing followed by subject-specific classifiers.
    TwoLayer {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        /// `all` adds the six pairwise comparisons; `all-class` does not.
        #[arg(long, default_value = "all-class")]
        pairs: String,
    },
    /// Thresholded linear SVM weights trained on every trial.
    InspectWeights {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fk", value_parser = ExportBlock::parse)]
        block: ExportBlock,
        #[arg(long, default_value_t = svm::DEFAULT_WEIGHT_THRESHOLD)]
        threshold: f64,
    },
    /// Feature matrix for an external embedding tool.
    ExportEmbeddingInput {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "fk", value_parser = ExportBlock::parse)]
        block: ExportBlock,
        #[arg(long)]
        fraction: Option<f64>,
    },
    /// Re-execute a run manifest.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

fn synth_config(seed: u64, a: &SynthArgs) -> SynthConfig {
    let mut c = SynthConfig {
        seed,
        ..SynthConfig::default()
    };
    if let Some(v) = a.subjects {
        c.n_subjects = v;
    }
    if let Some(v) = a.trials_per_cell {
        c.trials_per_cell = v;
    }
    if let Some(v) = a.intention_effect {
        c.intention_effect = v;
    }
    if let Some(v) = a.subject_effect {
        c.subject_effect = v;
    }
    if let Some(v) = a.noise {
        c.noise_std = v;
    }
    c
}

fn data_source(a: &DataArgs) -> std::result::Result<DataSource, Failure> {
    match (&a.dataset, a.synthetic) {
        (Some(path), false) => Ok(DataSource::Manifest { path: path.clone() }),
        (None, true) => Ok(DataSource::Synthetic {
            config: synth_config(a.synth.data_seed.unwrap_or(1), &a.synth),
        }),
        _ => Err(Failure::Usage("exactly one of --dataset or --synthetic is required".into())),
    }
}

fn pipeline_spec(a: &SpecArgs, seed: u64) -> std::result::Result<PipelineSpec, Failure> {
    let mut spec = match &a.spec {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|_| Error::MissingFile(path.clone()))?;
            serde_json::from_str::<PipelineSpec>(&text).map_err(Error::from)?
        }
        None => PipelineSpec::new(a.pipeline.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?),
    };
    spec.seed = seed;
    if let Some(c) = a.c {
        spec.c = c;
    }
    if let Some(k) = &a.criterion {
        spec.criterion = k.parse().map_err(|e: Error| Failure::Usage(e.to_string()))?;
    }
    spec.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(spec)
}

fn comparisons(pairs: &str) -> std::result::Result<Vec<ClassSubset>, Failure> {
    match pairs {
        "all" => Ok(ClassSubset::suite()),
        "all-class" => Ok(vec![ClassSubset::all()]),
        other => other
            .parse::<ClassSubset>()
            .map(|c| vec![c])
            .map_err(|e| Failure::Usage(format!("--pairs: {e}"))),
    }
}

fn resolve(command: Command) -> std::result::Result<(RunConfig, PathBuf), Failure> {
    let (task, out, jobs) = match command {
        Command::Synth { out, seed, synth } => (
            Task::Synth {
                config: synth_config(seed, &synth),
            },
            out,
            0,
        ),
        Command::Featurize { data, common, fraction } => (
            Task::Featurize {
                data: data_source(&data)?,
                spec: PipelineSpec {
                    seed: common.seed,
                    ..PipelineSpec::default()
                },
                fraction,
            },
            common.out,
            common.jobs,
        ),
        Command::Eval {
            data,
            common,
            spec,
            pairs,
        } => (
            Task::Eval {
                data: data_source(&data)?,
                spec: pipeline_spec(&spec, common.seed)?,
                comparisons: comparisons(&pairs)?,
            },
            common.out,
            common.jobs,
        ),
        Command::Snippet {
            data,
            common,
            spec,
            pairs,
            fractions,
        } => {
            if fractions.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
                return Err(Failure::Usage("--fractions must lie in (0, 1]".into()));
            }
            (
                Task::Snippet {
                    data: data_source(&data)?,
                    spec: pipeline_spec(&spec, common.seed)?,
                    fractions,
                    comparisons: comparisons(&pairs)?,
                },
                common.out,
                common.jobs,
            )
        }
        Command::Fuse { data, common, pairs } => {
            let with = |r: Representation, criterion: Criterion| PipelineSpec {
                seed: common.seed,
                criterion,
                ..PipelineSpec::new(r)
            };
            (
                Task::Fuse {
                    data: data_source(&data)?,
                    specs: vec![
                        with(Representation::CmimFused, Criterion::Acc),
                        with(Representation::PcaFused, Criterion::Acc),
                        with(Representation::LateFused, Criterion::Acc),
                        with(Representation::LateFused, Criterion::Mse),
                    ],
                    comparisons: comparisons(&pairs)?,
                },
                common.out,
                common.jobs,
            )
        }
        Command::TwoLayer {
            data,
            common,
            repeats,
            pairs,
        } => {
            let pairwise = match pairs.as_str() {
                "all" => true,
                "all-class" => false,
                _ => return Err(Failure::Usage("two-layer --pairs takes `all` or `all-class`".into())),
            };
            if repeats == 0 {
                return Err(Failure::Usage("--repeats must be at least 1".into()));
            }
            (
                Task::TwoLayer {
                    data: data_source(&data)?,
                    config: TwoLayerConfig {
                        repeats,
                        seed: common.seed,
                        pairwise,
                        ..TwoLayerConfig::default()
                    },
                },
                common.out,
                common.jobs,
            )
        }
        Command::InspectWeights {
            data,
            common,
            block,
            threshold,
        } => (
            Task::InspectWeights {
                data: data_source(&data)?,
                spec: PipelineSpec {
                    seed: common.seed,
                    ..PipelineSpec::default()
                },
                block,
                threshold,
            },
            common.out,
            common.jobs,
        ),
        Command::ExportEmbeddingInput {
            data,
            common,
            block,
            fraction,
        } => (
            Task::ExportEmbeddingInput {
                data: data_source(&data)?,
                spec: PipelineSpec {
                    seed: common.seed,
                    ..PipelineSpec::default()
                },
                block,
                fraction,
            },
            common.out,
            common.jobs,
        ),
        Command::Rerun { manifest, out } => {
            let text = fs::read_to_string(&manifest).map_err(|_| Error::MissingFile(manifest.clone()))?;
            let config: RunConfig = serde_json::from_str(&text).map_err(Error::from)?;
            return Ok((config, out));
        }
    };
    Ok((RunConfig { task, jobs }, out))
}

fn write(out: &Path, name: &str, contents: &str) -> Result<()> {
    fs::write(out.join(name), contents)?;
    Ok(())
}

fn spec_label(spec: &PipelineSpec) -> String {
    match (spec.representation, spec.criterion) {
        (Representation::LateFused, Criterion::Mse) => "late-fused-mse".into(),
        (Representation::LateFused, Criterion::Acc) => "late-fused-acc".into(),
        (r, _) => r.name().into(),
    }
}

fn eval_reports(dataset: &Dataset, spec: &PipelineSpec, comparisons: &[ClassSubset], out: &Path) -> Result<Vec<protocol::EvalReport>> {
    let cache = FeatureCache::build(dataset, spec, None)?;
    let mut reports = Vec::with_capacity(comparisons.len());
    for c in comparisons {
        let report = protocol::loso_evaluate_cached(&cache, spec, c, None)?;
        write(out, &format!("report_{}_{}.json", spec_label(spec), c.label()), &(report.to_json()? + "\n"))?;
        reports.push(report);
    }
    Ok(reports)
}

fn block_matrix(cache: &FeatureCache, block: ExportBlock) -> Result<nalgebra::DMatrix<f64>> {
    let rows: Vec<usize> = (0..cache.len()).collect();
    protocol::block_rows(cache, &BlockFit::Plain(block.block()), &rows)
}

fn feature_name(block: ExportBlock, f: usize) -> String {
    let offset = match block {
        ExportBlock::Fglobal => Channel::LOCAL,
        ExportBlock::Fk | ExportBlock::Flocal => 0,
        _ => return format!("f{f}"),
    };
    let ch = Channel::ALL[offset + f / RESAMPLED_LEN];
    format!("{}@{}", ch.name(), f % RESAMPLED_LEN)
}

/// Executes a resolved configuration, writing every output under `out`.
pub fn execute(config: &RunConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out)?;
    write(out, RUN_MANIFEST, &(serde_json::to_string_pretty(config)? + "\n"))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    pool.install(|| execute_task(&config.task, out))
}

fn execute_task(task: &Task, out: &Path) -> Result<()> {
    match task {
        Task::Synth { config } => {
            let ds = data::generate_synthetic(config)?;
            data::save_dataset(&ds, out)?;
        }
        Task::Featurize { data, spec, fraction } => {
            let ds = data.load()?;
            let cache = FeatureCache::build(&ds, spec, *fraction)?;
            for block in [ExportBlock::Fk, ExportBlock::Cov, ExportBlock::Hcov] {
                data::export_feature_matrix(&ds, &block_matrix(&cache, block)?, &out.join(format!("{}.csv", block.name())))?;
            }
        }
        Task::Eval { data, spec, comparisons } => {
            let ds = data.load()?;
            let reports = eval_reports(&ds, spec, comparisons, out)?;
            write(out, "summary.csv", &protocol::summary_csv(&reports))?;
        }
        Task::Snippet {
            data,
            spec,
            fractions,
            comparisons,
        } => {
            let ds = data.load()?;
            let cells = protocol::snippet_sweep(&ds, spec, fractions, comparisons)?;
            let reports: Vec<_> = cells.into_iter().map(|c| c.report).collect();
            write(out, "snippets.json", &(serde_json::to_string_pretty(&reports)? + "\n"))?;
            write(out, "summary.csv", &protocol::summary_csv(&reports))?;
        }
        Task::Fuse { data, specs, comparisons } => {
            let ds = data.load()?;
            let mut all = Vec::new();
            let mut csv = String::from("comparison,pipeline,mean_accuracy,valid_folds\n");
            for spec in specs {
                for r in eval_reports(&ds, spec, comparisons, out)? {
                    let _ = writeln!(csv, "{},{},{},{}", r.classes.label(), spec_label(spec), r.mean_accuracy, r.valid_folds());
                    all.push(r);
                }
            }
            write(out, "summary.csv", &csv)?;
        }
        Task::TwoLayer { data, config } => {
            let ds = data.load()?;
            let report = protocol::two_layer_evaluate(&ds, config)?;
            write(out, "two_layer.json", &(report.to_json()? + "\n"))?;
            let mut csv = String::from("comparison,layer1_accuracy,two_layer_accuracy,flat_accuracy,oracle_accuracy\n");
            for c in &report.comparisons {
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{}",
                    c.classes.label(),
                    c.mean_layer1_accuracy,
                    c.mean_end_to_end_accuracy,
                    c.mean_flat_accuracy,
                    c.mean_oracle_accuracy
                );
            }
            write(out, "summary.csv", &csv)?;
        }
        Task::InspectWeights {
            data,
            spec,
            block,
            threshold,
        } => {
            let ds = data.load()?;
            let cache = FeatureCache::build(&ds, spec, None)?;
            let x = block_matrix(&cache, *block)?;
            let mut z = Standardizer::fit(&x).apply(&x)?;
            z *= fusion::unit_gram_scale(&z);
            let rows: Vec<usize> = (0..cache.len()).collect();
            let model = svm::train_ovr(TrainInput::Features(&z), &cache.labels(&rows), spec.svm_params())?;
            let report = svm::mine_weights(&model, *threshold)?;
            write(out, "weights.json", &(serde_json::to_string_pretty(&report)? + "\n"))?;
            let mut csv = String::from("intention,feature,name,weight,intention_specific\n");
            for (k, w) in report.weights.iter().enumerate() {
                let class = report.classes[k];
                let intention = data::Intention::from_index(class).map_or("?", |i| i.name());
                for (f, v) in w.iter().enumerate().filter(|(_, v)| **v != 0.0) {
                    let specific = report.intention_specific.contains(&(class, f));
                    let _ = writeln!(csv, "{intention},{f},{},{v},{specific}", feature_name(*block, f));
                }
            }
            write(out, "weights.csv", &csv)?;
        }
        Task::ExportEmbeddingInput {
            data,
            spec,
            block,
            fraction,
        } => {
            let ds = data.load()?;
            let cache = FeatureCache::build(&ds, spec, *fraction)?;
            let x = block_matrix(&cache, *block)?;
            data::export_feature_matrix(&ds, &x, &out.join("embedding_input.csv"))?;
        }
    }
    Ok(())
}

/// Parses `argv` (program name first) and runs it. Returns the exit code:
/// 0 on success, 1 on usage errors, 2 on data errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = resolve(cli.command).and_then(|(config, out)| execute(&config, &out).map_err(Failure::Data));
    match result {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}
