//! Files written by a run.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use alr_core::data::{NoiseReport, NoisyDataset};
use alr_core::trainer::{AblationRow, EpochMetrics};
use alr_core::{MlpParams, SoftLabelStore};
use serde::{Deserialize, Serialize};

use crate::config::{NoiseMode, RunConfig};
use crate::error::{Error, Result};

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    f.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// One row per epoch under the fixed [`EpochMetrics::FIELDS`] header.
pub fn write_metrics_csv(path: &Path, rows: &[EpochMetrics]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(EpochMetrics::FIELDS)?;
    for m in rows {
        let mut rec = vec![m.epoch.to_string()];
        rec.extend(m.values()[1..].iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().ne(EpochMetrics::FIELDS) {
        return Err(Error::Format {
            path: path.to_path_buf(),
            position: "line 1".into(),
            detail: "unexpected metrics header".into(),
        });
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |detail: String| Error::Format {
            path: path.to_path_buf(),
            position: format!("line {line}"),
            detail,
        };
        let v: Vec<f64> = rec
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad(format!("`{c}` is not a number"))))
            .collect::<Result<_>>()?;
        out.push(EpochMetrics {
            epoch: v[0] as usize,
            lr: v[1],
            mean_train_loss: v[2],
            train_acc_vs_noisy: v[3],
            train_acc_vs_true: v[4],
            test_acc: v[5],
            clean_correct_frac: v[6],
            noisy_correct_frac: v[7],
            noisy_wrong_frac: v[8],
            noisy_memorized_frac: v[9],
            label_recovery: v[10],
            mean_target_entropy: v[11],
        });
    }
    Ok(out)
}

/// `sample_id,class_0,...,class_{K-1}`.
pub fn write_targets_csv(path: &Path, store: &SoftLabelStore) -> Result<()> {
    let mut w = csv_writer(path)?;
    let k = store.classes();
    let mut header = vec!["sample_id".to_string()];
    header.extend((0..k).map(|c| format!("class_{c}")));
    w.write_record(&header)?;
    for (i, row) in store.targets().chunks_exact(k).enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Penultimate-layer activations of both splits.
pub fn write_features_csv(path: &Path, params: &MlpParams, train: &NoisyDataset, test: &NoisyDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let width = params.layers().last().map_or(0, |l| l.inputs);
    let mut header: Vec<String> = ["sample_id", "split", "true_label", "noisy_label", "corrupted"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..width).map(|j| format!("f_{j}")));
    w.write_record(&header)?;
    for (name, ds) in [("train", train), ("test", test)] {
        for i in 0..ds.len() {
            let mut rec = vec![
                i.to_string(),
                name.to_string(),
                ds.true_labels()[i].to_string(),
                ds.noisy_labels()[i].to_string(),
                ds.corrupted()[i].to_string(),
            ];
            rec.extend(params.penultimate(ds.input(i))?.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["method", "test_acc", "noisy_memorized_frac", "noisy_correct_frac", "label_recovery"])?;
    for row in rows {
        let m = &row.final_metrics;
        w.write_record([
            row.method.to_string(),
            m.test_acc.to_string(),
            m.noisy_memorized_frac.to_string(),
            m.noisy_correct_frac.to_string(),
            m.label_recovery.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<MlpParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(MlpParams::from_bytes(&bytes)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSummary {
    pub kind: NoiseMode,
    pub rate: f64,
    pub exclude_true: bool,
    pub mapping: Option<Vec<usize>>,
    pub selected: usize,
    pub corrupted: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub n_train: usize,
    pub n_test: usize,
    pub classes: usize,
    pub dim: usize,
    pub seed: u64,
    pub noise: NoiseSummary,
    pub realized_noise_rate: f64,
    /// Raw little-endian f64 features, train rows then test rows.
    pub features_file: String,
    /// `split,index,true_label,noisy_label` per sample.
    pub labels_file: String,
}

impl DatasetManifest {
    pub fn new(train: &NoisyDataset, test: &NoisyDataset, seed: u64, noise: NoiseSummary) -> Self {
        DatasetManifest {
            n_train: train.len(),
            n_test: test.len(),
            classes: train.classes(),
            dim: train.dim(),
            seed,
            noise,
            realized_noise_rate: train.realized_noise_rate(),
            features_file: "dataset.bin".into(),
            labels_file: "dataset_labels.csv".into(),
        }
    }
}

pub fn noise_summary(cfg: &RunConfig, mapping: Option<Vec<usize>>, report: Option<NoiseReport>) -> NoiseSummary {
    NoiseSummary {
        kind: cfg.noise,
        rate: cfg.rate,
        exclude_true: cfg.exclude_true,
        mapping,
        selected: report.map_or(0, |r| r.selected),
        corrupted: report.map_or(0, |r| r.corrupted),
    }
}

/// Writes `dataset.json`, `dataset.bin` and `dataset_labels.csv` into `dir`.
pub fn dump_dataset(dir: &Path, manifest: &DatasetManifest, train: &NoisyDataset, test: &NoisyDataset) -> Result<Vec<PathBuf>> {
    let bin = dir.join(&manifest.features_file);
    let mut bytes = Vec::with_capacity((train.inputs().len() + test.inputs().len()) * 8);
    for v in train.inputs().iter().chain(test.inputs()) {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    write_bytes(&bin, &bytes)?;

    let labels = dir.join(&manifest.labels_file);
    let mut w = csv_writer(&labels)?;
    w.write_record(["split", "index", "true_label", "noisy_label"])?;
    for (name, ds) in [("train", train), ("test", test)] {
        for i in 0..ds.len() {
            w.write_record([
                name,
                &i.to_string(),
                &ds.true_labels()[i].to_string(),
                &ds.noisy_labels()[i].to_string(),
            ])?;
        }
    }
    w.flush().map_err(|e| Error::io(&labels, e))?;

    let json = dir.join("dataset.json");
    write_json(&json, manifest)?;
    Ok(vec![json, bin, labels])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub command: String,
    pub config: RunConfig,
    pub epochs_run: usize,
    /// Keyed by metric name.
    pub final_metrics: serde_json::Map<String, serde_json::Value>,
    pub realized_noise_rate: f64,
}

pub fn metrics_map(m: &EpochMetrics) -> serde_json::Map<String, serde_json::Value> {
    let mut map = serde_json::Map::new();
    map.insert("epoch".into(), m.epoch.into());
    for (name, v) in EpochMetrics::FIELDS.iter().zip(m.values()).skip(1) {
        map.insert(name.to_string(), v.into());
    }
    map
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    pub kind: String,
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: RunConfig,
    pub dataset: Option<DatasetManifest>,
    pub outputs: Vec<OutputFile>,
    pub wall_clock_seconds: f64,
    pub version: String,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        RunManifest {
            command: command.into(),
            config: config.clone(),
            dataset: None,
            outputs: Vec::new(),
            wall_clock_seconds: 0.0,
            version: env!("CARGO_PKG_VERSION").into(),
        }
    }

    pub fn add(&mut self, kind: &str, path: impl Into<PathBuf>) {
        self.outputs.push(OutputFile {
            kind: kind.into(),
            path: path.into(),
        });
    }

    /// Outputs listed in the manifest that are not on disk.
    pub fn missing(&self) -> Vec<&Path> {
        self.outputs
            .iter()
            .map(|o| o.path.as_path())
            .filter(|p| !p.exists())
            .collect()
    }
}
