//! Command-line interface.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::data::{self, generate_dataset, ingest_predictions, load_dataset, save_dataset, Split};
use crate::error::{Error, Result};
use crate::experiments::{self, Control, Protocol, StudyConfig};
use crate::geometry::{self, minima_table, write_table_csv};
use crate::landscape::{self, Normalization, DEFAULT_EXTENT, DEFAULT_RESOLUTION};
use crate::nncore::checkpoint;
use crate::nncore::model::NetworkLoss;
use crate::nncore::network::{LossKind, NetworkParams};
use crate::nncore::optim::OptimizerConfig;
use crate::nncore::train::Trainer;
use crate::objectives::Objective;
use crate::safety_metrics::{self, CorruptionKey, DEFAULT_BINS};
use crate::sharpness::{self, SharpnessConfig, DEFAULT_PERTURBATIONS, DEFAULT_RHO};

/// Study scale used when neither `--scale` nor a config file is given.
pub const DEFAULT_SCALE: f64 = 0.2;

pub const EXIT_OK: u8 = 0;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_CHECK_FAILED: u8 = 3;
pub const EXIT_RUNTIME: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "minima-geom", version, about = "Geometry and sharpness of minima on benchmark objectives")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Output directory.
    #[arg(long, global = true, env = "MINIMA_GEOM_OUT", default_value = "out")]
    pub out: PathBuf,

    /// Base seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Shrinks sample counts and epoch budgets (1.0 = full protocol size).
    #[arg(long, global = true)]
    pub scale: Option<f64>,

    /// Worker threads for independent runs.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Hessian statistics at the catalogued global minima.
    Geometry(GeometryArgs),
    /// Train one network on one synthetic dataset.
    Train(TrainArgs),
    /// Run a multi-seed study and aggregate it.
    Study(StudyArgs),
    /// Sharpness metrics of a checkpoint on a dataset.
    Sharpness(SharpnessArgs),
    /// Loss surface along two random directions.
    Landscape(LandscapeArgs),
    /// Calibration, accuracy, disagreement and corruption accuracy.
    Metrics(MetricsArgs),
    /// Generate a synthetic dataset.
    Dataset(DatasetArgs),
}

#[derive(Debug, Args)]
pub struct GeometryArgs {
    /// Single function to tabulate; all when omitted.
    pub function: Option<Objective>,
    /// Compare against the reference tables and exit 3 on mismatch.
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerChoice {
    Adam,
    Sgd,
}

#[derive(Debug, Args)]
pub struct OptimizerArgs {
    #[arg(long, value_enum, default_value_t = OptimizerChoice::Adam)]
    pub optimizer: OptimizerChoice,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
    /// Wrap the optimizer in SAM.
    #[arg(long)]
    pub sam: bool,
    /// SAM radius.
    #[arg(long, default_value_t = 0.05)]
    pub rho: f64,
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
}

impl OptimizerArgs {
    fn config(&self) -> OptimizerConfig {
        let base = match self.optimizer {
            OptimizerChoice::Adam => OptimizerConfig::adam(self.lr),
            OptimizerChoice::Sgd => OptimizerConfig::sgd(self.lr, self.momentum),
        };
        let base = OptimizerConfig { weight_decay: self.weight_decay, rho: self.rho, ..base };
        if self.sam {
            base.with_sam(self.rho)
        } else {
            base
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub objective: Objective,
    /// Training samples before scaling.
    #[arg(long, default_value_t = data::PROTOCOL_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: u64,
    /// Stop as soon as the train loss is at or below this value.
    #[arg(long)]
    pub target_loss: Option<f64>,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    pub hidden: Vec<usize>,
    #[command(flatten)]
    pub optimizer: OptimizerArgs,
}

#[derive(Debug, Args)]
pub struct StudyArgs {
    /// Study config JSON, or a manifest written by a previous study.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub objective: Option<Objective>,
    #[arg(long, value_enum)]
    pub protocol: Option<ProtocolChoice>,
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub controls: Option<Vec<Control>>,
    #[arg(long, value_delimiter = ',')]
    pub targets: Option<Vec<f64>>,
    /// SAM radius used by the SAM controls.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Perturbations for SAM sharpness.
    #[arg(long = "k-perturb")]
    pub k_perturb: Option<usize>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ProtocolChoice {
    Epochs,
    Target,
    Controls,
}

impl From<ProtocolChoice> for Protocol {
    fn from(p: ProtocolChoice) -> Self {
        match p {
            ProtocolChoice::Epochs => Protocol::EpochLogged,
            ProtocolChoice::Target => Protocol::TargetLoss,
            ProtocolChoice::Controls => Protocol::Controls,
        }
    }
}

#[derive(Debug, Args)]
pub struct SharpnessArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset CSV (`x,y,target`).
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RHO)]
    pub rho: f64,
    #[arg(long = "k-perturb", default_value_t = DEFAULT_PERTURBATIONS)]
    pub k_perturb: usize,
    /// Layer count for the Fisher-Rao norm; the affine layer count by default.
    #[arg(long)]
    pub layers: Option<usize>,
}

#[derive(Debug, Args)]
pub struct LandscapeArgs {
    /// Analytic objective to slice around `--point`.
    #[arg(long, conflicts_with = "checkpoint")]
    pub objective: Option<Objective>,
    /// Centre point for `--objective`; the first catalogued minimum by default.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    pub point: Option<Vec<f64>>,
    #[arg(long, requires = "dataset")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_RESOLUTION)]
    pub resolution: usize,
    #[arg(long, default_value_t = DEFAULT_EXTENT)]
    pub extent: f64,
    #[arg(long, default_value = "per_neuron")]
    pub normalization: Normalization,
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Prediction records (JSON lines or CSV).
    #[arg(long)]
    pub pred: PathBuf,
    /// Second model's records on the same examples, for disagreement.
    #[arg(long = "pred-b")]
    pub pred_b: Option<PathBuf>,
    /// Corrupted-set records as `name:severity=path` (repeatable).
    #[arg(long)]
    pub corrupted: Vec<String>,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    #[arg(long)]
    pub objective: Objective,
    #[arg(long, default_value_t = data::PROTOCOL_SAMPLES)]
    pub samples: usize,
    #[arg(long, value_enum, default_value_t = SplitChoice::Train)]
    pub split: SplitChoice,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitChoice {
    Train,
    Test,
}

/// What a command left behind, for the manifest.
struct Outcome {
    command: &'static str,
    config: Value,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    exit: u8,
}

/// Hash of a file in the style of a git blob: SHA-256 over
/// `"blob <len>\0"` followed by the contents.
pub fn content_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path)?;
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()));
    h.update(&bytes);
    Ok(hex::encode(h.finalize()))
}

fn scale_value(v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Validation(format!("scale: must be > 0, got {v}")))
    }
}

fn scaled_count(n: u64, scale: f64) -> u64 {
    ((n as f64 * scale).round() as u64).max(1)
}

/// Parses a config file, naming the offending field on failure.
fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &Path) -> Result<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        Error::Validation(format!("{}: {path}: {}", what.display(), e.inner()))
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn cmd_geometry(args: &GeometryArgs, out: &Path) -> Result<Outcome> {
    let mut outputs = Vec::new();
    let mut exit = EXIT_OK;
    match args.function {
        Some(f) => {
            let rows = minima_table(f)?;
            let path = out.join(format!("geometry_{}.csv", f.name()));
            write_table_csv(&rows, fs::File::create(&path)?)?;
            write_table_csv(&rows, std::io::stdout().lock())?;
            outputs.push(path);
        }
        None => {
            let t1 = out.join("table1.csv");
            write_table_csv(&minima_table(Objective::Himmelblau)?, fs::File::create(&t1)?)?;
            let mut single = Vec::new();
            for f in Objective::ALL.into_iter().filter(|&f| f != Objective::Himmelblau) {
                single.extend(minima_table(f)?);
            }
            let t2 = out.join("table2.csv");
            write_table_csv(&single, fs::File::create(&t2)?)?;
            outputs.extend([t1, t2]);
        }
    }
    if args.check {
        let checks = geometry::check_golden()?;
        let failed: Vec<_> = checks.iter().filter(|c| !c.pass).collect();
        for c in &failed {
            eprintln!(
                "MISMATCH {} at ({}, {}) {}: expected {}, computed {}",
                c.function.name(),
                c.point[0],
                c.point[1],
                c.statistic,
                c.expected,
                c.computed
            );
        }
        println!("checked {} reference values: {} mismatches", checks.len(), failed.len());
        let path = out.join("geometry_check.json");
        write_json(&path, &checks)?;
        outputs.push(path);
        if !failed.is_empty() {
            exit = EXIT_CHECK_FAILED;
        }
    }
    Ok(Outcome {
        command: "geometry",
        config: json!({ "function": args.function, "check": args.check }),
        inputs: vec![],
        outputs,
        exit,
    })
}

fn cmd_dataset(args: &DatasetArgs, g: &GlobalArgs) -> Result<Outcome> {
    let scale = scale_value(g.scale.unwrap_or(1.0))?;
    let n = scaled_count(args.samples as u64, scale) as usize;
    let seed = g.seed.unwrap_or(0);
    let split = match args.split {
        SplitChoice::Train => Split::Train,
        SplitChoice::Test => Split::Test,
    };
    let d = generate_dataset(args.objective, n, seed, split)?;
    let path = g.out.join("dataset.csv");
    save_dataset(&d, &path)?;
    Ok(Outcome {
        command: "dataset",
        config: json!({ "objective": args.objective, "samples": n, "seed": seed, "split": split, "dataset_id": d.id() }),
        inputs: vec![],
        outputs: vec![path],
        exit: EXIT_OK,
    })
}

fn cmd_train(args: &TrainArgs, g: &GlobalArgs) -> Result<Outcome> {
    let scale = scale_value(g.scale.unwrap_or(1.0))?;
    let n = scaled_count(args.samples as u64, scale) as usize;
    let seed = g.seed.unwrap_or(0);
    let optimizer = args.optimizer.config();
    optimizer.validate().map_err(|e| Error::Validation(format!("optimizer: {e}")))?;
    let mut widths = vec![2];
    widths.extend(&args.hidden);
    widths.push(1);
    let train = generate_dataset(args.objective, n, seed, Split::Train)?;
    let test = generate_dataset(args.objective, n, seed, Split::Test)?;
    let init = NetworkParams::kaiming_uniform(&widths, seed)?;
    let mut trainer = Trainer::new(init, train.flat_inputs(), &train.targets, LossKind::Mse, optimizer)?;
    let mut reached = None;
    while trainer.epoch() < args.epochs {
        let target = args.target_loss;
        let (loss, stopped) = trainer.step_unless(|l| target.is_some_and(|t| l <= t))?;
        if stopped {
            reached = Some(loss);
            break;
        }
    }
    let train_loss = trainer.current_loss()?;
    let params = trainer.params().clone();
    let test_loss = NetworkLoss::for_params(&params, test.flat_inputs(), &test.targets, LossKind::Mse)?
        .data_loss(params.as_slice())?;
    let ckpt = g.out.join("params.ckpt");
    checkpoint::save(&params, &ckpt)?;
    let train_path = g.out.join("train.csv");
    let test_path = g.out.join("test.csv");
    save_dataset(&train, &train_path)?;
    save_dataset(&test, &test_path)?;
    let summary = json!({
        "epochs": trainer.epoch(),
        "train_loss": train_loss,
        "test_loss": test_loss,
        "generalisation_gap": (test_loss - train_loss).abs(),
        "target_reached": reached.is_some(),
        "gradient_evaluations": trainer.gradient_evaluations(),
        "checkpoint_hash": checkpoint::content_hash(&params),
        "dataset_id": train.id(),
    });
    let summary_path = g.out.join("train_summary.json");
    write_json(&summary_path, &summary)?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(Outcome {
        command: "train",
        config: json!({
            "objective": args.objective,
            "samples": n,
            "seed": seed,
            "epochs": args.epochs,
            "target_loss": args.target_loss,
            "widths": widths,
            "optimizer": optimizer,
        }),
        inputs: vec![],
        outputs: vec![ckpt, train_path, test_path, summary_path],
        exit: EXIT_OK,
    })
}

/// Loads `path` as either a bare study config or a previous study manifest.
/// The boolean is true for a manifest, whose config is already scaled.
fn load_study_config(path: &Path) -> Result<(StudyConfig, bool)> {
    let text = fs::read_to_string(path)?;
    let value: Value = parse_json(&text, path)?;
    if value.get("command").and_then(Value::as_str) == Some("study") {
        let config = value.get("config").cloned().ok_or_else(|| Error::Validation(format!("{}: config: missing", path.display())))?;
        let config: StudyConfig = parse_json(&config.to_string(), path)?;
        Ok((config, true))
    } else {
        Ok((parse_json(&text, path)?, false))
    }
}

/// Resolves a study config from a file plus flag overrides; flags win.
pub fn resolve_study_config(args: &StudyArgs, g: &GlobalArgs) -> Result<StudyConfig> {
    let (mut config, resolved) = match &args.config {
        Some(p) => load_study_config(p)?,
        None => (StudyConfig::default(), false),
    };
    let scale = match (g.scale, args.config.is_some(), resolved) {
        (Some(s), _, _) => Some(s),
        (None, false, _) => Some(DEFAULT_SCALE),
        (None, true, _) => None,
    };
    if let Some(s) = scale {
        config = config.scaled(s)?;
    }
    if let Some(o) = args.objective {
        config.objective = o;
    }
    if let Some(p) = args.protocol {
        config.protocol = p.into();
        if config.protocol == Protocol::Controls && args.config.is_none() {
            config.controls = Control::ALL.to_vec();
        }
    }
    if let Some(n) = args.runs {
        config.n_runs = n;
    }
    if let Some(c) = &args.controls {
        config.controls = c.clone();
    }
    if let Some(t) = &args.targets {
        config.target_losses = t.clone();
    }
    if let Some(r) = args.rho {
        config.optimizer.rho = r;
    }
    if let Some(k) = args.k_perturb {
        config.sharpness.perturbations = k;
    }
    if let Some(s) = g.seed {
        config.base_seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_study(args: &StudyArgs, g: &GlobalArgs) -> Result<Outcome> {
    let config = resolve_study_config(args, g)?;
    let records = experiments::run_study(&config, g.jobs)?;
    let rows = experiments::aggregate(&records);
    let runs = g.out.join("runs.csv");
    let agg = g.out.join("aggregate.csv");
    experiments::write_runs_csv(&records, &runs)?;
    experiments::write_aggregate_csv(&rows, &agg)?;
    let unreachable = records.iter().filter(|r| r.status == experiments::RunStatus::Unreachable).count();
    let failed = records.iter().filter(|r| r.status == experiments::RunStatus::Failed).count();
    println!("{} records ({unreachable} unreachable, {failed} failed)", records.len());
    Ok(Outcome {
        command: "study",
        config: serde_json::to_value(&config)?,
        inputs: args.config.iter().cloned().collect(),
        outputs: vec![runs, agg],
        exit: EXIT_OK,
    })
}

fn cmd_sharpness(args: &SharpnessArgs, g: &GlobalArgs) -> Result<Outcome> {
    let params = checkpoint::load(&args.checkpoint)?;
    let dataset = load_dataset(&args.dataset)?;
    let seed = g.seed.unwrap_or(0);
    let config = SharpnessConfig { rho: args.rho, perturbations: args.k_perturb, layers: args.layers };
    if !(config.rho > 0.0) {
        return Err(Error::Validation(format!("rho: must be > 0, got {}", config.rho)));
    }
    if config.perturbations == 0 {
        return Err(Error::Validation("k-perturb: must be at least 1".into()));
    }
    let report = sharpness::measure(&params, &dataset, LossKind::Mse, &config, seed)?;
    let path = g.out.join("sharpness.json");
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome {
        command: "sharpness",
        config: json!({ "checkpoint": args.checkpoint, "dataset": args.dataset, "seed": seed, "sharpness": config }),
        inputs: vec![args.checkpoint.clone(), args.dataset.clone()],
        outputs: vec![path],
        exit: EXIT_OK,
    })
}

fn cmd_landscape(args: &LandscapeArgs, g: &GlobalArgs) -> Result<Outcome> {
    let seed = g.seed.unwrap_or(0);
    let mut inputs = Vec::new();
    let (grid, source) = match (&args.objective, &args.checkpoint, &args.dataset) {
        (Some(f), None, _) => {
            let point = match &args.point {
                Some(p) => [p[0], p[1]],
                None => f.global_minima()[0],
            };
            let grid = landscape::objective_grid(*f, point, seed, args.normalization, args.resolution, args.extent)?;
            (grid, json!({ "objective": f, "point": point }))
        }
        (None, Some(ckpt), Some(ds)) => {
            let params = checkpoint::load(ckpt)?;
            let dataset = load_dataset(ds)?;
            let mut model = NetworkLoss::for_params(&params, dataset.flat_inputs(), &dataset.targets, LossKind::Mse)?;
            let grid =
                landscape::network_grid(&mut model, &params, seed, args.normalization, args.resolution, args.extent)?;
            inputs.extend([ckpt.clone(), ds.clone()]);
            (grid, json!({ "checkpoint": ckpt, "dataset": ds, "dataset_id": dataset.id() }))
        }
        _ => return Err(Error::Validation("give either --objective or --checkpoint with --dataset".into())),
    };
    let csv_path = g.out.join("landscape.csv");
    let meta_path = g.out.join("landscape.json");
    landscape::export_grid(&grid, &csv_path)?;
    landscape::write_metadata(&grid, &meta_path)?;
    println!("centre {} ({} flagged cells)", grid.center(), grid.meta.flagged_cells);
    Ok(Outcome {
        command: "landscape",
        config: json!({
            "source": source,
            "seed": seed,
            "resolution": args.resolution,
            "extent": args.extent,
            "normalization": args.normalization,
        }),
        inputs,
        outputs: vec![csv_path, meta_path],
        exit: EXIT_OK,
    })
}

fn parse_corrupted(arg: &str) -> Result<(CorruptionKey, PathBuf)> {
    let bad = || Error::Validation(format!("corrupted: expected name:severity=path, got {arg:?}"));
    let (key, path) = arg.split_once('=').ok_or_else(bad)?;
    let (name, severity) = key.split_once(':').ok_or_else(bad)?;
    let severity: u8 = severity.trim().parse().map_err(|_| bad())?;
    Ok((CorruptionKey::new(name.trim(), severity), PathBuf::from(path)))
}

fn cmd_metrics(args: &MetricsArgs, g: &GlobalArgs) -> Result<Outcome> {
    if args.bins == 0 {
        return Err(Error::Validation("bins: must be at least 1".into()));
    }
    let primary = ingest_predictions(&args.pred)?;
    let mut inputs = vec![args.pred.clone()];
    let other = match &args.pred_b {
        Some(p) => {
            inputs.push(p.clone());
            Some(ingest_predictions(p)?)
        }
        None => None,
    };
    let mut corrupted = BTreeMap::new();
    for arg in &args.corrupted {
        let (key, path) = parse_corrupted(arg)?;
        corrupted.insert(key, ingest_predictions(&path)?);
        inputs.push(path);
    }
    let report = safety_metrics::evaluate(&primary, other.as_deref(), &corrupted, args.bins)?;
    let path = g.out.join("metrics.json");
    write_json(&path, &report)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(Outcome {
        command: "metrics",
        config: json!({ "pred": args.pred, "pred_b": args.pred_b, "corrupted": args.corrupted, "bins": args.bins }),
        inputs,
        outputs: vec![path],
        exit: EXIT_OK,
    })
}

fn file_entries(paths: &[PathBuf]) -> Result<Vec<Value>> {
    paths
        .iter()
        .map(|p| Ok(json!({ "path": p, "sha256_blob": content_hash(p)? })))
        .collect()
}

fn write_manifest(out: &Path, outcome: &Outcome, global: &GlobalArgs) -> Result<()> {
    let manifest = json!({
        "tool": "minima-geom",
        "version": env!("CARGO_PKG_VERSION"),
        "command": outcome.command,
        "config": outcome.config,
        "seed": global.seed,
        "scale": global.scale,
        "jobs": global.jobs,
        "inputs": file_entries(&outcome.inputs)?,
        "outputs": file_entries(&outcome.outputs)?,
    });
    write_json(&out.join("manifest.json"), &manifest)
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Validation(_) | Error::Contract(_) | Error::Parse { .. } | Error::Domain(_) | Error::Json(_) | Error::Csv(_) => {
            EXIT_VALIDATION
        }
        Error::Io(_) | Error::Numeric { .. } => EXIT_RUNTIME,
    }
}

/// Runs a parsed command line and returns the process exit code. On failure
/// an `INCOMPLETE` marker naming the error is left in the output directory.
pub fn run(cli: Cli) -> u8 {
    let g = &cli.global;
    let result = fs::create_dir_all(&g.out).map_err(Error::from).and_then(|_| {
        if g.jobs == 0 {
            return Err(Error::Validation("jobs: must be at least 1".into()));
        }
        let marker = g.out.join("INCOMPLETE");
        if marker.exists() {
            fs::remove_file(&marker)?;
        }
        let outcome = match &cli.command {
            Command::Geometry(a) => cmd_geometry(a, &g.out),
            Command::Train(a) => cmd_train(a, g),
            Command::Study(a) => cmd_study(a, g),
            Command::Sharpness(a) => cmd_sharpness(a, g),
            Command::Landscape(a) => cmd_landscape(a, g),
            Command::Metrics(a) => cmd_metrics(a, g),
            Command::Dataset(a) => cmd_dataset(a, g),
        }?;
        write_manifest(&g.out, &outcome, g)?;
        Ok(outcome.exit)
    });
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let _ = fs::write(g.out.join("INCOMPLETE"), format!("{e}\n"));
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn corrupted_spec_parsing() {
        let (k, p) = parse_corrupted("fog:3=a/b.jsonl").unwrap();
        assert_eq!(k, CorruptionKey::new("fog", 3));
        assert_eq!(p, PathBuf::from("a/b.jsonl"));
        assert!(parse_corrupted("fog=x").is_err());
        assert!(parse_corrupted("fog:high=x").is_err());
    }

    #[test]
    fn flags_override_config_and_default_scale_applies() {
        let cli = Cli::parse_from(["minima-geom", "study", "--objective", "beale", "--runs", "3", "--seed", "7"]);
        let Command::Study(args) = &cli.command else { panic!() };
        let c = resolve_study_config(args, &cli.global).unwrap();
        assert_eq!((c.objective, c.n_runs, c.base_seed), (Objective::Beale, 3, 7));
        assert_eq!((c.n_samples, c.epochs_budget), (2_000, 200_000));
    }

    #[test]
    fn unknown_config_field_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"optimizer":{"learning_rte":0.1}}"#).unwrap();
        let err = load_study_config(&p).unwrap_err().to_string();
        assert!(err.contains("optimizer"), "{err}");
    }
}
