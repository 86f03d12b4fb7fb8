//! Synthetic regression datasets and prediction-record ingestion.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{contract, Error, Result};
use crate::objectives::{Objective, Point};
use crate::rng::{self, Purpose};

/// Inputs are drawn from `U(-DOMAIN, DOMAIN)` per coordinate.
pub const DOMAIN: f64 = 3.5;

/// Full-protocol dataset size.
pub const PROTOCOL_SAMPLES: usize = 10_000;

/// Maximum tolerated deviation of a confidence vector's sum from 1.
pub const CONFIDENCE_SUM_TOL: f64 = 1e-6;

/// Sums closer to 1 than this are kept as given.
const RENORMALIZE_FLOOR: f64 = 1e-12;

pub const DATASET_HEADER: [&str; 3] = ["x", "y", "target"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn purpose(self) -> Purpose {
        match self {
            Split::Train => Purpose::TrainData,
            Split::Test => Purpose::TestData,
        }
    }
}

/// Where a dataset came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Generated { objective: Objective, seed: u64, split: Split },
    Loaded { path: String },
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionDataset {
    pub inputs: Vec<Point>,
    pub targets: Vec<f64>,
    pub origin: Origin,
}

impl RegressionDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    /// Row-major `N x 2` view of the inputs.
    pub fn flat_inputs(&self) -> &[f64] {
        self.inputs.as_flattened()
    }

    /// Stable identifier: origin summary plus a content hash.
    pub fn id(&self) -> String {
        let mut h = Sha256::new();
        for (p, t) in self.inputs.iter().zip(&self.targets) {
            h.update(p[0].to_le_bytes());
            h.update(p[1].to_le_bytes());
            h.update(t.to_le_bytes());
        }
        let digest = hex::encode(h.finalize());
        let prefix = match &self.origin {
            Origin::Generated { objective, seed, split } => {
                format!("{}-{}-s{seed}", objective.name(), if *split == Split::Train { "train" } else { "test" })
            }
            Origin::Loaded { .. } => "file".to_string(),
        };
        format!("{prefix}-n{}-{}", self.len(), &digest[..16])
    }

    /// Same points in a different order (for invariance checks).
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            inputs: order.iter().map(|&i| self.inputs[i]).collect(),
            targets: order.iter().map(|&i| self.targets[i]).collect(),
            origin: self.origin.clone(),
        }
    }
}

/// `n` i.i.d. points on `[-3.5, 3.5]^2` with exact objective targets.
///
/// The train and test splits of one seed draw from disjoint random streams.
pub fn generate_dataset(objective: Objective, n: usize, seed: u64, split: Split) -> Result<RegressionDataset> {
    if n == 0 {
        return contract("dataset size must be positive");
    }
    let mut rng = rng::stream(seed, split.purpose(), 0);
    let dist = Uniform::new_inclusive(-DOMAIN, DOMAIN);
    let inputs: Vec<Point> = (0..n).map(|_| [dist.sample(&mut rng), dist.sample(&mut rng)]).collect();
    let targets = inputs.iter().map(|&p| objective.value(p)).collect();
    Ok(RegressionDataset { inputs, targets, origin: Origin::Generated { objective, seed, split } })
}

/// Writes `x,y,target` rows; values use the shortest decimal form that
/// parses back to the identical `f64`.
pub fn save_dataset(dataset: &RegressionDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(DATASET_HEADER)?;
    for (p, t) in dataset.inputs.iter().zip(&dataset.targets) {
        w.write_record([p[0].to_string(), p[1].to_string(), t.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<RegressionDataset> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new().has_headers(false).trim(csv::Trim::All).from_path(path)?;
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for (idx, record) in reader.records().enumerate() {
        let line = idx as u64 + 1;
        let record = record.map_err(|e| Error::Parse { line, message: e.to_string() })?;
        if idx == 0 {
            let fields: Vec<&str> = record.iter().collect();
            if fields != DATASET_HEADER {
                return Err(Error::Parse { line, message: format!("expected header x,y,target, found {}", fields.join(",")) });
            }
            continue;
        }
        if record.len() != 3 {
            return Err(Error::Parse { line, message: format!("expected 3 fields, found {}", record.len()) });
        }
        let mut vals = [0.0; 3];
        for (v, field) in vals.iter_mut().zip(record.iter()) {
            *v = field
                .parse::<f64>()
                .map_err(|e| Error::Parse { line, message: format!("'{field}': {e}") })?;
            if !v.is_finite() {
                return Err(Error::Parse { line, message: format!("non-finite value '{field}'") });
            }
        }
        inputs.push([vals[0], vals[1]]);
        targets.push(vals[2]);
    }
    if targets.is_empty() {
        return Err(Error::Parse { line: 1, message: "dataset has no rows".into() });
    }
    Ok(RegressionDataset { inputs, targets, origin: Origin::Loaded { path: path.display().to_string() } })
}

/// One classifier prediction: the true label and the class confidences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub true_label: usize,
    pub confidences: Vec<f64>,
    pub predicted_label: usize,
}

impl PredictionRecord {
    /// Validates the confidence vector, renormalizing sums within
    /// [`CONFIDENCE_SUM_TOL`] of 1.
    pub fn new(true_label: usize, confidences: Vec<f64>) -> Result<Self> {
        if confidences.is_empty() {
            return Err(Error::Validation("empty confidence vector".into()));
        }
        if confidences.iter().any(|c| !c.is_finite() || *c < 0.0 || *c > 1.0) {
            return Err(Error::Validation(format!("confidences outside [0, 1]: {confidences:?}")));
        }
        let sum: f64 = confidences.iter().sum();
        if (sum - 1.0).abs() > CONFIDENCE_SUM_TOL {
            return Err(Error::Validation(format!("confidences sum to {sum}, not 1")));
        }
        // Rounding-level deviations are left alone; dividing by such a sum
        // would only move the confidences by an ulp.
        let confidences: Vec<f64> = if (sum - 1.0).abs() <= RENORMALIZE_FLOOR {
            confidences
        } else {
            confidences.iter().map(|c| c / sum).collect()
        };
        let predicted_label = argmax(&confidences);
        Ok(Self { true_label, confidences, predicted_label })
    }

    pub fn confidence(&self) -> f64 {
        self.confidences[self.predicted_label]
    }

    pub fn is_correct(&self) -> bool {
        self.predicted_label == self.true_label
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Deserialize)]
struct JsonPrediction {
    label: usize,
    confidences: Vec<f64>,
}

/// Reads prediction records from JSON lines (`{"label":..,"confidences":[..]}`)
/// or CSV rows `label,c0,c1,...` (an optional header starting with `label`
/// is skipped). The format is chosen from the first non-blank character.
pub fn ingest_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut records = Vec::new();
    let mut json: Option<bool> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx as u64 + 1;
        let line = line?;
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let is_json = *json.get_or_insert(text.starts_with('{'));
        let row_err = |e: Error| match e {
            Error::Validation(m) => Error::Validation(format!("row {line_no}: {m}")),
            other => other,
        };
        let record = if is_json {
            let p: JsonPrediction =
                serde_json::from_str(text).map_err(|e| Error::Parse { line: line_no, message: e.to_string() })?;
            PredictionRecord::new(p.label, p.confidences).map_err(row_err)?
        } else {
            let fields: Vec<&str> = text.split(',').map(str::trim).collect();
            if records.is_empty() && fields[0].eq_ignore_ascii_case("label") {
                continue;
            }
            let label = fields[0]
                .parse::<usize>()
                .map_err(|e| Error::Parse { line: line_no, message: format!("label '{}': {e}", fields[0]) })?;
            let conf = fields[1..]
                .iter()
                .map(|f| f.parse::<f64>().map_err(|e| Error::Parse { line: line_no, message: format!("'{f}': {e}") }))
                .collect::<Result<Vec<f64>>>()?;
            PredictionRecord::new(label, conf).map_err(row_err)?
        };
        records.push(record);
    }
    Ok(records)
}

pub fn write_predictions_jsonl(records: &[PredictionRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, &serde_json::json!({ "label": r.true_label, "confidences": r.confidences }))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn generated_dataset_respects_domain_and_targets() {
        for f in Objective::ALL {
            let d = generate_dataset(f, 500, 3, Split::Train).unwrap();
            assert_eq!(d.len(), 500);
            for (p, t) in d.inputs.iter().zip(&d.targets) {
                assert!(p.iter().all(|c| (-DOMAIN..=DOMAIN).contains(c)));
                assert_eq!(*t, f.value(*p));
                assert!(*t >= 0.0);
            }
        }
    }

    #[test]
    fn protocol_size_and_determinism() {
        let a = generate_dataset(Objective::Sphere, PROTOCOL_SAMPLES, 42, Split::Train).unwrap();
        let b = generate_dataset(Objective::Sphere, PROTOCOL_SAMPLES, 42, Split::Train).unwrap();
        assert_eq!(a.len(), 10_000);
        assert_eq!(a, b);
        assert_eq!(a.id(), b.id());
        assert!(generate_dataset(Objective::Sphere, 0, 1, Split::Train).is_err());
    }

    #[test]
    fn input_mean_is_centered() {
        let d = generate_dataset(Objective::Sphere, 1_000_000, 8, Split::Train).unwrap();
        let mean = d.inputs.iter().map(|p| p[0]).sum::<f64>() / d.len() as f64;
        assert!(mean.abs() < 0.02, "{mean}");
    }

    #[test]
    fn splits_share_no_points() {
        let tr = generate_dataset(Objective::Booth, 10_000, 5, Split::Train).unwrap();
        let te = generate_dataset(Objective::Booth, 10_000, 5, Split::Test).unwrap();
        let seen: HashSet<[u64; 2]> = tr.inputs.iter().map(|p| p.map(f64::to_bits)).collect();
        assert!(te.inputs.iter().all(|p| !seen.contains(&p.map(f64::to_bits))));
        // Same objective, different seed: different points.
        let other = generate_dataset(Objective::Booth, 10, 6, Split::Train).unwrap();
        assert_ne!(other.inputs, tr.inputs[..10].to_vec());
    }

    #[test]
    fn csv_roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        let d = generate_dataset(Objective::Beale, 300, 1, Split::Test).unwrap();
        save_dataset(&d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back.inputs, d.inputs);
        assert_eq!(back.targets, d.targets);
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("x,y,target\n"));
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "x,y,target\n1,2,5\n0.5,abc,1\n").unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        std::fs::write(&path, "a,b,c\n1,2,3\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 1, .. })));
        std::fs::write(&path, "x,y,target\n1,2,NaN\n").unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { line: 2, .. })));
    }

    #[test]
    fn record_validation_and_argmax() {
        let r = PredictionRecord::new(1, vec![0.3, 0.7]).unwrap();
        assert_eq!(r.predicted_label, 1);
        assert!(PredictionRecord::new(0, vec![0.3, 0.6]).is_err());
        let r = PredictionRecord::new(3, vec![0.1; 10]).unwrap();
        assert_eq!(r.predicted_label, 0);
        let r = PredictionRecord::new(0, vec![0.5, 0.5 + 5e-7]).unwrap();
        assert!((r.confidences.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(PredictionRecord::new(0, vec![1.2, -0.2]).is_err());
    }

    #[test]
    fn ingest_both_formats() {
        let dir = tempfile::tempdir().unwrap();
        let csv_path = dir.path().join("p.csv");
        std::fs::write(&csv_path, "label,c0,c1\n1, 0.3, 0.7\n0,0.9,0.1\n").unwrap();
        let recs = ingest_predictions(&csv_path).unwrap();
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].predicted_label, 1);
        assert_eq!(recs[1].predicted_label, 0);

        let json_path = dir.path().join("p.jsonl");
        write_predictions_jsonl(&recs, &json_path).unwrap();
        assert_eq!(ingest_predictions(&json_path).unwrap(), recs);

        std::fs::write(&json_path, "{\"label\":0,\"confidences\":[0.5,0.5]}\n{\"label\":1,\"confidences\":[0.5,0.4]}\n")
            .unwrap();
        let err = ingest_predictions(&json_path).unwrap_err().to_string();
        assert!(err.contains("row 2"), "{err}");
    }
}
