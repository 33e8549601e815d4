use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use vfn::bench::{bench_forward, to_csv};
use vfn::data::{self, BackboneStructure, DataError, DatasetSplit, SplitManifest};
use vfn::model::{self, Checkpoint, Metrics, MetricRecord, ModelError, TrainSinks, VfnModel};
use vfn::numerics::OptimizerState;
use vfn::verify::{self, Kernels, Level};

use crate::config::{DataFormat, RunConfig};

/// Why a command failed, and with which exit status.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration, unreadable or empty data, incompatible checkpoint.
    #[error("{0}")]
    Input(String),
    /// The command ran and something it checked did not hold.
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFiniteLoss { .. } | ModelError::Numerics(_) => CliError::Failed(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "vfn", version, about = "Train, evaluate and verify vector field inverse-folding models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write checkpoints plus a JSONL metric log.
    Train(TrainArgs),
    /// Report perplexity and recovery of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Design sequences for backbones and write them as FASTA.
    Predict(PredictArgs),
    /// Run the operator oracles and invariance checks.
    Verify(VerifyArgs),
    /// Time forward passes and print a CSV table.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training data, overriding `data.train_path`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Checkpoint directory, overriding `output.checkpoint_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Resume from this checkpoint.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset to score; defaults to the test split of the configured data.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Model configuration to check the checkpoint against.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// A PDB file, a directory of them, or a JSONL chain set.
    #[arg(long)]
    pub data: PathBuf,
    /// FASTA destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also dump the raw `n x 20` logits as JSON.
    #[arg(long)]
    pub logits: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value = "fast")]
    pub level: Level,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model configuration for the invariance check.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "5,15")]
    pub layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "100")]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Base model configuration; `n_layers` is replaced per row.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// What `eval` prints and writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity: f64,
    /// Residue-level rate over the whole set, in percent.
    pub recovery: f64,
    /// Median of per-protein recoveries, in percent.
    pub median_recovery: f64,
    pub n_proteins: usize,
    pub n_residues: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogitsRecord {
    pub name: String,
    pub logits: Vec<Vec<f64>>,
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let last = train(&args)?;
            match last {
                Some(r) => println!("{}", serde_json::to_string(&r).expect("records serialize")),
                None => println!("nothing to do: checkpoint already at max_steps"),
            }
        }
        Command::Eval(args) => {
            let report = eval(&args)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("reports serialize"));
        }
        Command::Predict(args) => predict(&args)?,
        Command::Verify(args) => verify(&args)?,
        Command::Bench(args) => bench(&args)?,
    }
    Ok(())
}

fn input(message: impl Into<String>) -> CliError {
    CliError::Input(message.into())
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| input(format!("{}: {e}", path.display())))
}

/// PDB for `.pdb`/`.ent` files and directories, JSONL for `.jsonl`/`.json`,
/// otherwise whatever the configuration says.
fn format_for(path: &Path, configured: DataFormat) -> DataFormat {
    if path.is_dir() {
        return DataFormat::Pdb;
    }
    match path.extension().and_then(|e| e.to_str()) {
        Some("pdb" | "ent") => DataFormat::Pdb,
        Some("jsonl" | "json") => DataFormat::Jsonl,
        _ => configured,
    }
}

pub fn load_records(path: &Path, format: DataFormat) -> Result<Vec<BackboneStructure>, CliError> {
    if !path.exists() {
        return Err(input(format!("data path not found: {}", path.display())));
    }
    match format_for(path, format) {
        DataFormat::Jsonl => Ok(data::read_jsonl(path)?),
        DataFormat::Pdb if path.is_dir() => {
            let mut files: Vec<PathBuf> = std::fs::read_dir(path)
                .map_err(|e| input(format!("{}: {e}", path.display())))?
                .filter_map(|entry| entry.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "pdb" || e == "ent"))
                .collect();
            files.sort();
            files
                .iter()
                .map(|f| data::read_pdb(f, None).map_err(|e| input(format!("{}: {e}", f.display()))))
                .collect()
        }
        DataFormat::Pdb => Ok(vec![data::read_pdb(path, None)
            .map_err(|e| input(format!("{}: {e}", path.display())))?]),
    }
}

fn load_split(cfg: &RunConfig, path: &Path) -> Result<DatasetSplit, CliError> {
    let records = load_records(path, cfg.data.format)?;
    let manifest = cfg.data.split_manifest.as_deref().map(SplitManifest::read).transpose()?;
    Ok(DatasetSplit::assign(records, manifest.as_ref())?)
}

/// Checkpoint plus the model it describes. The configuration comes from
/// `config_path` when given and from the checkpoint header otherwise.
fn load_model(checkpoint: &Path, config_path: Option<&Path>) -> Result<(RunConfig, VfnModel, Checkpoint), CliError> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let cfg = match config_path {
        Some(path) => RunConfig::read(path).map_err(input)?,
        None => RunConfig::from_value(ckpt.config.clone())
            .map_err(|e| input(format!("{}: {e}", checkpoint.display())))?,
    };
    let model = VfnModel::from_params(cfg.model.clone(), ckpt.params.clone()).map_err(|e| {
        input(format!("{} does not match the model configuration:\n{e}", checkpoint.display()))
    })?;
    Ok((cfg, model, ckpt))
}

/// Trains under `flag > file > default` precedence. Returns the final
/// metric record, if any step ran.
pub fn train(args: &TrainArgs) -> Result<Option<MetricRecord>, CliError> {
    let resumed = args
        .checkpoint
        .as_deref()
        .map(|path| load_model(path, args.config.as_deref()))
        .transpose()?;
    let mut cfg = match (&resumed, &args.config) {
        (Some((cfg, _, _)), _) => cfg.clone(),
        (None, path) => RunConfig::load(path.as_deref()).map_err(input)?,
    };
    if let Some(path) = &args.data {
        cfg.data.train_path = Some(path.clone());
    }
    if let Some(dir) = &args.out {
        cfg.output.checkpoint_dir = dir.clone();
    }
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    if let Some(steps) = args.max_steps {
        cfg.train.max_steps = steps;
    }
    cfg.validate().map_err(input)?;

    let path = cfg
        .data
        .train_path
        .clone()
        .ok_or_else(|| input("no training data: set data.train_path or pass --data"))?;
    let split = load_split(&cfg, &path)?;
    if split.train.is_empty() {
        return Err(input(format!("training split of {} is empty", path.display())));
    }

    let (mut model, mut optimizer) = match resumed {
        Some((_, model, ckpt)) => {
            let optimizer = ckpt.optimizer.unwrap_or_else(|| OptimizerState {
                step: ckpt.step,
                ..OptimizerState::new()
            });
            log::info!("resuming at step {}", optimizer.step);
            (model, optimizer)
        }
        None => (VfnModel::new(cfg.model.clone(), cfg.train.seed)?, OptimizerState::new()),
    };
    let sinks = TrainSinks {
        log_path: Some(cfg.output.log_path()),
        checkpoint_path: Some(cfg.output.checkpoint_path()),
        config_echo: cfg.to_value(),
    };
    log::info!(
        "training on {} structures ({} validation), checkpoints in {}",
        split.train.len(),
        split.validation.len(),
        cfg.output.checkpoint_dir.display()
    );
    let out = model::train(
        &mut model,
        &mut optimizer,
        &split.train,
        &split.validation,
        &cfg.train,
        |record, model, optimizer| sinks.record(record, model, optimizer),
    )?;
    Ok(out.records.last().copied())
}

pub fn eval(args: &EvalArgs) -> Result<EvalReport, CliError> {
    let (cfg, model, _) = load_model(&args.checkpoint, args.config.as_deref())?;
    let records = match &args.data {
        Some(path) => load_records(path, cfg.data.format)?,
        None => {
            let path = cfg
                .data
                .train_path
                .clone()
                .ok_or_else(|| input("no evaluation data: pass --data"))?;
            let split = load_split(&cfg, &path)?;
            if cfg.data.split_manifest.is_some() {
                split.test
            } else {
                split.train
            }
        }
    };
    let graphs = model::prepare(&model, &records)?;
    if graphs.is_empty() {
        return Err(input("evaluation set is empty"));
    }
    let per_protein = model::evaluate(&model, &graphs)?;
    let mut total = Metrics::default();
    for m in &per_protein {
        total.merge(m);
    }
    let mut recoveries: Vec<f64> = per_protein.iter().filter(|m| m.scored > 0).map(Metrics::recovery).collect();
    recoveries.sort_by(f64::total_cmp);
    let report = EvalReport {
        perplexity: total.perplexity(),
        recovery: total.recovery(),
        median_recovery: if recoveries.is_empty() {
            0.0
        } else {
            vfn::bench::median(&recoveries)
        },
        n_proteins: graphs.len(),
        n_residues: total.scored,
    };
    if let Some(out) = &args.out {
        write_file(out, &serde_json::to_string_pretty(&report).expect("reports serialize"))?;
    }
    Ok(report)
}

pub fn predict(args: &PredictArgs) -> Result<(), CliError> {
    let (cfg, model, _) = load_model(&args.checkpoint, args.config.as_deref())?;
    let structures = load_records(&args.data, cfg.data.format)?;
    let mut designs = Vec::with_capacity(structures.len());
    let mut logits = Vec::with_capacity(structures.len());
    for s in &structures {
        let pred = model.predict(s)?;
        logits.push(LogitsRecord {
            name: s.name.clone(),
            logits: pred.logits.data().chunks(pred.logits.shape()[1]).map(<[f64]>::to_vec).collect(),
        });
        designs.push((s.name.clone(), pred.predicted));
    }
    match &args.out {
        Some(out) => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| input(format!("{}: {e}", dir.display())))?;
            }
            data::write_fasta(&designs, out)?
        }
        None => print!("{}", data::format_fasta(&designs)),
    }
    if let Some(path) = &args.logits {
        write_file(path, &serde_json::to_string(&logits).expect("logits serialize"))?;
    }
    Ok(())
}

pub fn verify(args: &VerifyArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref()).map_err(input)?;
    let report = verify::run(args.level, &cfg.model, &Kernels::default(), args.seed);
    print!("{report}");
    if report.passed() {
        return Ok(());
    }
    let failed: Vec<&str> = report.failures().map(|c| c.name).collect();
    Err(CliError::Failed(format!("failed: {}", failed.join(", "))))
}

pub fn bench(args: &BenchArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load(args.config.as_deref()).map_err(input)?;
    if args.layers.contains(&0) || args.sizes.iter().any(|&n| n < 2) {
        return Err(input("layer counts must be positive and sizes at least 2"));
    }
    let rows = bench_forward(&cfg.model, &args.layers, &args.sizes, args.reps, args.seed)?;
    let csv = to_csv(&rows);
    match &args.out {
        Some(path) => write_file(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(())
}
