//! Toy training protocols: epoch-logged runs, target-loss runs, matched-seed
//! controls, and mean/SEM aggregation over runs.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::path::Path;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_dataset, RegressionDataset, Split, PROTOCOL_SAMPLES};
use crate::error::{Error, Result};
use crate::nncore::checkpoint;
use crate::nncore::model::NetworkLoss;
use crate::nncore::network::{LossKind, NetworkParams};
use crate::nncore::optim::{OptimizerConfig, OptimizerKind};
use crate::nncore::train::Trainer;
use crate::objectives::Objective;
use crate::sharpness::{self, SharpnessConfig, SharpnessReport};

pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_EPOCH_BUDGET: u64 = 1_000_000;
pub const DEFAULT_LOG_EPOCHS: [u64; 8] = [0, 1, 10, 100, 1_000, 10_000, 100_000, 1_000_000];
pub const DEFAULT_TARGET_LOSSES: [f64; 5] = [300.0, 150.0, 100.0, 10.0, 1.0];
/// Weight decay applied by the weight-decay controls.
pub const CONTROL_WEIGHT_DECAY: f64 = 5e-4;
/// A run has converged once its training loss improved by less than
/// `CONVERGENCE_TOL` over the last `CONVERGENCE_WINDOW` epochs.
pub const CONVERGENCE_TOL: f64 = 1e-8;
pub const CONVERGENCE_WINDOW: u64 = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Control {
    #[serde(rename = "baseline")]
    Baseline,
    #[serde(rename = "sam")]
    Sam,
    #[serde(rename = "weight_decay")]
    WeightDecay,
    #[serde(rename = "sam+weight_decay")]
    SamWeightDecay,
}

impl Control {
    pub const ALL: [Control; 4] = [Control::Baseline, Control::Sam, Control::WeightDecay, Control::SamWeightDecay];

    pub fn name(self) -> &'static str {
        match self {
            Control::Baseline => "baseline",
            Control::Sam => "sam",
            Control::WeightDecay => "weight_decay",
            Control::SamWeightDecay => "sam+weight_decay",
        }
    }

    /// The optimizer this control trains with, derived from the study's base
    /// optimizer.
    pub fn optimizer(self, base: &OptimizerConfig, weight_decay: f64) -> OptimizerConfig {
        let plain = OptimizerConfig {
            kind: match base.kind.base() {
                crate::nncore::BaseOptimizer::Adam => OptimizerKind::Adam,
                crate::nncore::BaseOptimizer::SgdMomentum => OptimizerKind::SgdMomentum,
            },
            ..*base
        };
        match self {
            Control::Baseline => plain,
            Control::Sam => plain.with_sam(base.rho),
            Control::WeightDecay => OptimizerConfig { weight_decay, ..plain },
            Control::SamWeightDecay => OptimizerConfig { weight_decay, ..plain.with_sam(base.rho) },
        }
    }
}

impl fmt::Display for Control {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Control {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Control::ALL
            .into_iter()
            .find(|c| c.name() == s.trim())
            .ok_or_else(|| Error::Validation(format!("unknown control {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    /// Record at fixed epochs.
    EpochLogged,
    /// Record the first epoch each target train loss is reached.
    TargetLoss,
    /// Train every control to convergence on matched seeds.
    Controls,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::EpochLogged => "epoch_logged",
            Protocol::TargetLoss => "target_loss",
            Protocol::Controls => "controls",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    pub objective: Objective,
    pub protocol: Protocol,
    pub n_runs: usize,
    pub n_samples: usize,
    /// Test-set size per run; the training size when absent.
    pub test_samples: Option<usize>,
    pub epochs_budget: u64,
    pub log_epochs: Vec<u64>,
    pub target_losses: Vec<f64>,
    pub hidden_widths: Vec<usize>,
    pub optimizer: OptimizerConfig,
    pub controls: Vec<Control>,
    pub control_weight_decay: f64,
    pub base_seed: u64,
    pub sharpness: SharpnessConfig,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            objective: Objective::Sphere,
            protocol: Protocol::TargetLoss,
            n_runs: DEFAULT_RUNS,
            n_samples: PROTOCOL_SAMPLES,
            test_samples: None,
            epochs_budget: DEFAULT_EPOCH_BUDGET,
            log_epochs: DEFAULT_LOG_EPOCHS.to_vec(),
            target_losses: DEFAULT_TARGET_LOSSES.to_vec(),
            hidden_widths: vec![64, 64],
            optimizer: OptimizerConfig::default(),
            controls: vec![Control::Baseline],
            control_weight_decay: CONTROL_WEIGHT_DECAY,
            base_seed: 0,
            sharpness: SharpnessConfig::default(),
        }
    }
}

impl StudyConfig {
    /// Shrinks sample counts and the epoch budget by `scale`, dropping log
    /// epochs past the new budget.
    pub fn scaled(mut self, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::Validation(format!("scale: must be > 0, got {scale}")));
        }
        let shrink = |n: f64| ((n * scale).round() as u64).max(1);
        self.n_samples = shrink(self.n_samples as f64) as usize;
        self.test_samples = self.test_samples.map(|n| shrink(n as f64) as usize);
        self.epochs_budget = shrink(self.epochs_budget as f64);
        let budget = self.epochs_budget;
        self.log_epochs.retain(|&e| e <= budget);
        Ok(self)
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![2];
        w.extend(&self.hidden_widths);
        w.push(1);
        w
    }

    pub fn test_size(&self) -> usize {
        self.test_samples.unwrap_or(self.n_samples)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |field: &str, msg: String| Err(Error::Validation(format!("{field}: {msg}")));
        if self.n_runs == 0 {
            return fail("n_runs", "must be at least 1".into());
        }
        if self.n_samples == 0 {
            return fail("n_samples", "must be at least 1".into());
        }
        if self.test_size() == 0 {
            return fail("test_samples", "must be at least 1".into());
        }
        if self.hidden_widths.contains(&0) {
            return fail("hidden_widths", "widths must be positive".into());
        }
        if !self.log_epochs.windows(2).all(|w| w[0] < w[1]) {
            return fail("log_epochs", "must be strictly ascending".into());
        }
        if let (Protocol::EpochLogged, Some(&last)) = (self.protocol, self.log_epochs.last()) {
            if last > self.epochs_budget {
                return fail("log_epochs", format!("{last} exceeds epochs_budget {}", self.epochs_budget));
            }
        }
        if !self.target_losses.windows(2).all(|w| w[0] > w[1]) {
            return fail("target_losses", "must be strictly descending".into());
        }
        if self.target_losses.iter().any(|t| !t.is_finite()) {
            return fail("target_losses", "must be finite".into());
        }
        match self.protocol {
            Protocol::EpochLogged if self.log_epochs.is_empty() => return fail("log_epochs", "must not be empty".into()),
            Protocol::TargetLoss if self.target_losses.is_empty() => {
                return fail("target_losses", "must not be empty".into())
            }
            _ => {}
        }
        if self.controls.is_empty() {
            return fail("controls", "must not be empty".into());
        }
        let mut seen = self.controls.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.controls.len() {
            return fail("controls", "duplicate control".into());
        }
        if !(self.control_weight_decay >= 0.0 && self.control_weight_decay.is_finite()) {
            return fail("control_weight_decay", "must be >= 0".into());
        }
        for c in &self.controls {
            c.optimizer(&self.optimizer, self.control_weight_decay)
                .validate()
                .map_err(|e| Error::Validation(format!("optimizer: {e}")))?;
        }
        if !(self.sharpness.rho > 0.0) {
            return fail("sharpness.rho", "must be > 0".into());
        }
        if self.sharpness.perturbations == 0 {
            return fail("sharpness.K", "must be at least 1".into());
        }
        Ok(())
    }

    /// Dataset seed of run `i`.
    pub fn run_seed(&self, run_index: usize) -> u64 {
        self.base_seed.wrapping_add(run_index as u64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    /// The epoch budget ran out before the target loss was reached.
    Unreachable,
    /// Training produced a non-finite value.
    Failed,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Ok => "ok",
            RunStatus::Unreachable => "unreachable",
            RunStatus::Failed => "failed",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub objective: Objective,
    pub control: Control,
    pub protocol: Protocol,
    pub run_index: usize,
    pub seed: u64,
    /// Log epoch, target loss, or convergence outcome, depending on protocol.
    pub tag: String,
    pub epoch: u64,
    pub status: RunStatus,
    pub train_loss: f64,
    pub test_loss: f64,
    /// `|test_loss - train_loss|`.
    pub generalisation_gap: f64,
    pub gradient_evaluations: u64,
    pub initial_train_loss: f64,
    pub init_hash: String,
    pub sharpness: Option<SharpnessReport>,
}

/// Everything one run needs, shared between protocols.
struct RunContext<'a> {
    config: &'a StudyConfig,
    control: Control,
    run_index: usize,
    seed: u64,
    init: &'a NetworkParams,
    init_hash: &'a str,
    train: RegressionDataset,
    test: RegressionDataset,
}

impl RunContext<'_> {
    fn record(
        &self,
        trainer: &mut Trainer<'_>,
        tag: String,
        status: RunStatus,
        initial_train_loss: f64,
        with_sharpness: bool,
    ) -> Result<RunRecord> {
        let train_loss = trainer.current_loss()?;
        let test_loss = {
            let mut model = NetworkLoss::for_params(trainer.params(), self.test.flat_inputs(), &self.test.targets, LossKind::Mse)?;
            model.data_loss(trainer.params().as_slice())?
        };
        let sharpness = if with_sharpness {
            Some(sharpness::measure(trainer.params(), &self.train, LossKind::Mse, &self.config.sharpness, self.seed)?)
        } else {
            None
        };
        Ok(RunRecord {
            objective: self.config.objective,
            control: self.control,
            protocol: self.config.protocol,
            run_index: self.run_index,
            seed: self.seed,
            tag,
            epoch: trainer.epoch(),
            status,
            train_loss,
            test_loss,
            generalisation_gap: (test_loss - train_loss).abs(),
            gradient_evaluations: trainer.gradient_evaluations(),
            initial_train_loss,
            init_hash: self.init_hash.to_string(),
            sharpness,
        })
    }

    fn failed(&self, tag: String, epoch: u64, evals: u64, initial_train_loss: f64) -> RunRecord {
        RunRecord {
            objective: self.config.objective,
            control: self.control,
            protocol: self.config.protocol,
            run_index: self.run_index,
            seed: self.seed,
            tag,
            epoch,
            status: RunStatus::Failed,
            train_loss: f64::NAN,
            test_loss: f64::NAN,
            generalisation_gap: f64::NAN,
            gradient_evaluations: evals,
            initial_train_loss,
            init_hash: self.init_hash.to_string(),
            sharpness: None,
        }
    }

    fn trainer(&self) -> Result<Trainer<'_>> {
        let optimizer = self.control.optimizer(&self.config.optimizer, self.config.control_weight_decay);
        Trainer::new(self.init.clone(), self.train.flat_inputs(), &self.train.targets, LossKind::Mse, optimizer)
    }

    fn run(&self) -> Result<Vec<RunRecord>> {
        let mut trainer = self.trainer()?;
        let initial = trainer.current_loss()?;
        let out = match self.config.protocol {
            Protocol::EpochLogged => self.epoch_logged(&mut trainer, initial),
            Protocol::TargetLoss => self.target_loss(&mut trainer, initial),
            Protocol::Controls => self.until_converged(&mut trainer, initial),
        };
        info!(
            "{} {} run {} finished at epoch {}",
            self.config.objective.name(),
            self.control,
            self.run_index,
            trainer.epoch()
        );
        out
    }

    fn epoch_logged(&self, trainer: &mut Trainer<'_>, initial: f64) -> Result<Vec<RunRecord>> {
        let mut records = Vec::new();
        for &log_epoch in &self.config.log_epochs {
            while trainer.epoch() < log_epoch {
                if let Err(e) = trainer.step() {
                    return diverged(e, self.failed(log_epoch.to_string(), trainer.epoch(), trainer.gradient_evaluations(), initial), records);
                }
            }
            match self.record(trainer, log_epoch.to_string(), RunStatus::Ok, initial, true) {
                Ok(r) => records.push(r),
                Err(e) => {
                    return diverged(e, self.failed(log_epoch.to_string(), trainer.epoch(), trainer.gradient_evaluations(), initial), records)
                }
            }
        }
        Ok(records)
    }

    fn target_loss(&self, trainer: &mut Trainer<'_>, initial: f64) -> Result<Vec<RunRecord>> {
        let targets = &self.config.target_losses;
        let budget = self.config.epochs_budget;
        let mut records = Vec::new();
        let mut next = 0;
        while next < targets.len() {
            let target = targets[next];
            let at_cap = trainer.epoch() >= budget;
            let loss = match trainer.step_unless(|l| at_cap || l <= target) {
                Ok((loss, _)) => loss,
                Err(e) => {
                    let (epoch, evals) = (trainer.epoch(), trainer.gradient_evaluations());
                    return diverged(e, self.failed(tag_of(target), epoch, evals, initial), records);
                }
            };
            if loss <= target {
                records.push(self.record(trainer, tag_of(target), RunStatus::Ok, initial, true)?);
                next += 1;
            } else if at_cap {
                for &t in &targets[next..] {
                    records.push(self.record(trainer, tag_of(t), RunStatus::Unreachable, initial, false)?);
                }
                break;
            }
        }
        Ok(records)
    }

    fn until_converged(&self, trainer: &mut Trainer<'_>, initial: f64) -> Result<Vec<RunRecord>> {
        let budget = self.config.epochs_budget;
        let mut window: VecDeque<f64> = VecDeque::with_capacity(CONVERGENCE_WINDOW as usize + 1);
        let mut converged = false;
        while trainer.epoch() < budget {
            let loss = match trainer.step() {
                Ok(l) => l,
                Err(e) => {
                    let (epoch, evals) = (trainer.epoch(), trainer.gradient_evaluations());
                    return diverged(e, self.failed("diverged".into(), epoch, evals, initial), Vec::new());
                }
            };
            window.push_back(loss);
            if window.len() > CONVERGENCE_WINDOW as usize {
                let old = window.pop_front().unwrap();
                if old - loss < CONVERGENCE_TOL {
                    converged = true;
                    break;
                }
            }
        }
        let tag = if converged { "converged" } else { "budget" };
        Ok(vec![self.record(trainer, tag.into(), RunStatus::Ok, initial, true)?])
    }
}

fn tag_of(target: f64) -> String {
    format!("{target}")
}

/// Numeric failures end the run with a failed record; anything else aborts
/// the study.
fn diverged(e: Error, failed: RunRecord, mut records: Vec<RunRecord>) -> Result<Vec<RunRecord>> {
    match e {
        Error::Numeric { .. } => {
            log::warn!("run {} ({}) diverged: {e}", failed.run_index, failed.control);
            records.push(failed);
            Ok(records)
        }
        other => Err(other),
    }
}

/// Runs `config.protocol` for every control and run. `jobs > 1` spreads runs
/// over a thread pool; the records do not depend on `jobs`.
pub fn run_study(config: &StudyConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    config.validate()?;
    let init = NetworkParams::kaiming_uniform(&config.widths(), config.base_seed)?;
    let init_hash = checkpoint::content_hash(&init);
    let units: Vec<(Control, usize)> =
        config.controls.iter().flat_map(|&c| (0..config.n_runs).map(move |i| (c, i))).collect();
    let run_unit = |&(control, run_index): &(Control, usize)| -> Result<Vec<RunRecord>> {
        let seed = config.run_seed(run_index);
        let ctx = RunContext {
            config,
            control,
            run_index,
            seed,
            init: &init,
            init_hash: &init_hash,
            train: generate_dataset(config.objective, config.n_samples, seed, Split::Train)?,
            test: generate_dataset(config.objective, config.test_size(), seed, Split::Test)?,
        };
        ctx.run()
    };
    let results: Vec<Result<Vec<RunRecord>>> = if jobs <= 1 {
        units.iter().map(run_unit).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::Validation(format!("jobs: {e}")))?;
        pool.install(|| units.par_iter().map(run_unit).collect())
    };
    let mut records = Vec::new();
    for r in results {
        records.extend(r?);
    }
    Ok(records)
}

pub fn run_epoch_logged_study(config: &StudyConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    run_study(&StudyConfig { protocol: Protocol::EpochLogged, ..config.clone() }, jobs)
}

pub fn run_target_loss_study(config: &StudyConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    run_study(&StudyConfig { protocol: Protocol::TargetLoss, ..config.clone() }, jobs)
}

pub fn run_matched_controls(config: &StudyConfig, jobs: usize) -> Result<Vec<RunRecord>> {
    run_study(&StudyConfig { protocol: Protocol::Controls, ..config.clone() }, jobs)
}

/// Metrics summarised by [`aggregate`], in column order.
pub const AGGREGATE_METRICS: [&str; 7] = [
    "epoch",
    "train_loss",
    "test_loss",
    "generalisation_gap",
    "sam_sharpness",
    "fisher_rao_norm",
    "relative_flatness",
];

fn metric(record: &RunRecord, name: &str) -> Option<f64> {
    let s = record.sharpness.as_ref();
    match name {
        "epoch" => Some(record.epoch as f64),
        "train_loss" => Some(record.train_loss),
        "test_loss" => Some(record.test_loss),
        "generalisation_gap" => Some(record.generalisation_gap),
        "sam_sharpness" => s.map(|s| s.sam_sharpness),
        "fisher_rao_norm" => s.map(|s| s.fisher_rao_norm),
        "relative_flatness" => s.map(|s| s.relative_flatness),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub objective: Objective,
    pub control: Control,
    pub protocol: Protocol,
    pub tag: String,
    pub metric: String,
    /// Runs that contributed.
    pub n: usize,
    pub mean: Option<f64>,
    /// `sample_std / sqrt(n)`; absent for fewer than two runs.
    pub sem: Option<f64>,
    /// Runs left out because they failed or never reached the target.
    pub excluded: usize,
}

/// `(mean, sem)` of `values`; the SEM uses the sample standard deviation.
pub fn mean_sem(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

type CellKey = (Objective, Control, Protocol, String);

/// Orders tags within a protocol: log epochs ascending, target losses
/// descending.
fn tag_rank(protocol: Protocol, tag: &str) -> f64 {
    let v = tag.parse::<f64>().unwrap_or(0.0);
    match protocol {
        Protocol::EpochLogged => v,
        Protocol::TargetLoss => -v,
        Protocol::Controls => 0.0,
    }
}

/// Mean and SEM per `(objective, control, protocol, tag, metric)`. Records
/// are sorted by run index before reduction, so the result does not depend on
/// their order.
pub fn aggregate(records: &[RunRecord]) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<CellKey, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        cells.entry((r.objective, r.control, r.protocol, r.tag.clone())).or_default().push(r);
    }
    let mut cells: Vec<_> = cells.into_iter().collect();
    cells.sort_by(|(a, _), (b, _)| {
        (a.0, a.1, a.2)
            .cmp(&(b.0, b.1, b.2))
            .then(tag_rank(a.2, &a.3).total_cmp(&tag_rank(b.2, &b.3)))
            .then(a.3.cmp(&b.3))
    });
    let mut rows = Vec::new();
    for ((objective, control, protocol, tag), mut members) in cells {
        members.sort_by_key(|r| r.run_index);
        let ok: Vec<&RunRecord> = members.iter().copied().filter(|r| r.status == RunStatus::Ok).collect();
        let excluded = members.len() - ok.len();
        for name in AGGREGATE_METRICS {
            let values: Vec<f64> = ok.iter().filter_map(|r| metric(r, name)).collect();
            let (mean, sem) = mean_sem(&values);
            rows.push(AggregateRow {
                objective,
                control,
                protocol,
                tag: tag.clone(),
                metric: name.to_string(),
                n: values.len(),
                mean,
                sem,
                excluded,
            });
        }
    }
    rows
}

pub const RUNS_HEADER: [&str; 20] = [
    "objective",
    "control",
    "protocol",
    "run_index",
    "seed",
    "tag",
    "epoch",
    "status",
    "train_loss",
    "test_loss",
    "generalisation_gap",
    "sam_sharpness",
    "fisher_rao_norm",
    "fr_clamped",
    "relative_flatness",
    "gradient_evaluations",
    "initial_train_loss",
    "init_hash",
    "checkpoint_hash",
    "dataset_id",
];

fn num(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

pub fn write_runs_csv(records: &[RunRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(RUNS_HEADER)?;
    for r in records {
        let s = r.sharpness.as_ref();
        w.write_record([
            r.objective.name().to_string(),
            r.control.name().to_string(),
            r.protocol.name().to_string(),
            r.run_index.to_string(),
            r.seed.to_string(),
            r.tag.clone(),
            r.epoch.to_string(),
            r.status.name().to_string(),
            num(r.train_loss),
            num(r.test_loss),
            num(r.generalisation_gap),
            opt(s.map(|s| s.sam_sharpness)),
            opt(s.map(|s| s.fisher_rao_norm)),
            s.map(|s| s.fr_clamped.to_string()).unwrap_or_default(),
            opt(s.map(|s| s.relative_flatness)),
            r.gradient_evaluations.to_string(),
            num(r.initial_train_loss),
            r.init_hash.clone(),
            s.map(|s| s.checkpoint_hash.clone()).unwrap_or_default(),
            s.map(|s| s.dataset_id.clone()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one row per `(objective, control, protocol, tag)` with a mean and
/// SEM column for every metric.
pub fn write_aggregate_csv(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = ["objective", "control", "protocol", "tag", "n", "excluded"].map(String::from).to_vec();
    for m in AGGREGATE_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_sem"));
    }
    w.write_record(&header)?;
    for group in rows.chunks(AGGREGATE_METRICS.len()) {
        let first = &group[0];
        let n = group.iter().map(|r| r.n).max().unwrap_or(0);
        let mut line = vec![
            first.objective.name().to_string(),
            first.control.name().to_string(),
            first.protocol.name().to_string(),
            first.tag.clone(),
            n.to_string(),
            first.excluded.to_string(),
        ];
        for r in group {
            line.push(opt(r.mean));
            line.push(opt(r.sem));
        }
        w.write_record(&line)?;
    }
    w.flush()?;
    Ok(())
}
