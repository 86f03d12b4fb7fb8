//! Calibration, prediction disagreement and corruption accuracy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::PredictionRecord;
use crate::error::{contract, Result};

pub const DEFAULT_BINS: usize = 15;

/// Expected calibration error (L1) of top-1 confidence.
///
/// Bins are equal-width on `[0, 1]`: bin `k` holds confidences in
/// `[k/n, (k+1)/n)`, and the last bin also holds `1.0`. Empty bins
/// contribute nothing.
pub fn expected_calibration_error(records: &[PredictionRecord], n_bins: usize) -> Result<f64> {
    if records.is_empty() {
        return contract("calibration error of an empty record set");
    }
    if n_bins == 0 {
        return contract("n_bins must be at least 1");
    }
    let mut count = vec![0usize; n_bins];
    let mut correct = vec![0usize; n_bins];
    let mut conf_sum = vec![0.0f64; n_bins];
    for r in records {
        let c = r.confidence();
        let bin = ((c * n_bins as f64) as usize).min(n_bins - 1);
        count[bin] += 1;
        conf_sum[bin] += c;
        if r.is_correct() {
            correct[bin] += 1;
        }
    }
    let n = records.len() as f64;
    let ece = (0..n_bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let m = count[b] as f64;
            let acc = correct[b] as f64 / m;
            let conf = conf_sum[b] / m;
            (m / n) * (acc - conf).abs()
        })
        .sum();
    Ok(ece)
}

/// Fraction of examples on which two models' top-1 predictions differ.
pub fn prediction_disagreement(a: &[PredictionRecord], b: &[PredictionRecord]) -> Result<f64> {
    if a.len() != b.len() {
        return contract(format!("record sets differ in length: {} vs {}", a.len(), b.len()));
    }
    if a.is_empty() {
        return contract("disagreement of empty record sets");
    }
    let differ = a.iter().zip(b).filter(|(x, y)| x.predicted_label != y.predicted_label).count();
    Ok(differ as f64 / a.len() as f64)
}

pub fn accuracy(records: &[PredictionRecord]) -> Result<f64> {
    if records.is_empty() {
        return contract("accuracy of an empty record set");
    }
    Ok(records.iter().filter(|r| r.is_correct()).count() as f64 / records.len() as f64)
}

/// Identifies one corrupted copy of the test set.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CorruptionKey {
    pub corruption: String,
    pub severity: u8,
}

impl CorruptionKey {
    pub fn new(corruption: impl Into<String>, severity: u8) -> Self {
        Self { corruption: corruption.into(), severity }
    }
}

/// Unweighted mean accuracy over every `(corruption, severity)` set.
///
/// Every corrupted set must cover the same examples as `clean`.
pub fn corruption_accuracy(
    clean: &[PredictionRecord],
    corrupted: &BTreeMap<CorruptionKey, Vec<PredictionRecord>>,
) -> Result<f64> {
    if corrupted.is_empty() {
        return contract("no corrupted record sets given");
    }
    let mut sum = 0.0;
    for (key, records) in corrupted {
        if !clean.is_empty() && records.len() != clean.len() {
            return contract(format!(
                "corrupted set {}/{} has {} records, clean set has {}",
                key.corruption,
                key.severity,
                records.len(),
                clean.len()
            ));
        }
        sum += accuracy(records)?;
    }
    Ok(sum / corrupted.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub ece: f64,
    pub accuracy: f64,
    pub corruption_accuracy: Option<f64>,
    pub disagreement: Option<f64>,
    pub n_bins: usize,
    /// Binning rule, recorded for reproducibility.
    pub binning: String,
    pub record_counts: BTreeMap<String, usize>,
}

/// Computes every metric that the supplied record sets allow.
pub fn evaluate(
    records: &[PredictionRecord],
    other: Option<&[PredictionRecord]>,
    corrupted: &BTreeMap<CorruptionKey, Vec<PredictionRecord>>,
    n_bins: usize,
) -> Result<EvaluationReport> {
    let mut record_counts = BTreeMap::new();
    record_counts.insert("primary".to_string(), records.len());
    if let Some(o) = other {
        record_counts.insert("secondary".to_string(), o.len());
    }
    for (k, v) in corrupted {
        record_counts.insert(format!("{}/{}", k.corruption, k.severity), v.len());
    }
    Ok(EvaluationReport {
        ece: expected_calibration_error(records, n_bins)?,
        accuracy: accuracy(records)?,
        corruption_accuracy: if corrupted.is_empty() { None } else { Some(corruption_accuracy(records, corrupted)?) },
        disagreement: other.map(|o| prediction_disagreement(records, o)).transpose()?,
        n_bins,
        binning: "equal-width [k/n,(k+1)/n), last bin closed; L1".to_string(),
        record_counts,
    })
}
