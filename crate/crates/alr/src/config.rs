//! Run configuration: defaults, flat `key=value` files, and the echo written
//! next to every run so it can be replayed.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use alr_core::trainer::{Method, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Blobs,
    Idx,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    None,
    Sym,
    Asym,
}

impl DatasetKind {
    fn as_str(self) -> &'static str {
        match self {
            DatasetKind::Blobs => "blobs",
            DatasetKind::Idx => "idx",
            DatasetKind::Csv => "csv",
        }
    }
}

impl NoiseMode {
    fn as_str(self) -> &'static str {
        match self {
            NoiseMode::None => "none",
            NoiseMode::Sym => "sym",
            NoiseMode::Asym => "asym",
        }
    }
}

mod method_serde {
    use alr_core::trainer::Method;
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(m: &Method, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(m.as_str())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Method, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(D::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(with = "method_serde")]
    pub method: Method,
    pub dataset: DatasetKind,
    /// Blob sample count, both splits together.
    pub n: usize,
    /// Blob classes; file datasets take theirs from the labels.
    pub classes: usize,
    pub dim: usize,
    pub spread: f64,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub label_column: usize,
    pub header: bool,
    pub noise: NoiseMode,
    pub rate: f64,
    pub exclude_true: bool,
    /// `circular`, `cifar10` or a file of class indices.
    pub mapping: Option<String>,
    pub alpha: f64,
    pub lambda: f64,
    pub warmup: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub decay: f64,
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub shuffle: bool,
    pub out: PathBuf,
    pub dump_targets: Vec<usize>,
    pub features_out: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        RunConfig {
            method: t.method,
            dataset: DatasetKind::Blobs,
            n: 2000,
            classes: 4,
            dim: 2,
            spread: 1.0,
            images: None,
            labels: None,
            data: None,
            label_column: 0,
            header: false,
            noise: NoiseMode::Sym,
            rate: 0.0,
            exclude_true: false,
            mapping: None,
            alpha: t.alpha,
            lambda: t.lambda,
            warmup: t.warmup,
            epochs: t.epochs,
            batch: t.batch_size,
            lr: t.lr,
            momentum: t.momentum,
            weight_decay: t.weight_decay,
            milestones: t.milestones,
            decay: t.decay_factor,
            hidden: t.hidden,
            seed: t.seed,
            shuffle: t.shuffle,
            out: PathBuf::from("runs"),
            dump_targets: Vec::new(),
            features_out: None,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::usage(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::usage(format!("{key}: expected true or false, got `{value}`"))),
    }
}

/// Comma-separated list; the empty string is the empty list.
pub fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl RunConfig {
    /// Sets one field from its textual form. Keys are the long flag names;
    /// `-` and `_` are interchangeable.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.replace('_', "-").as_str() {
            "method" => self.method = value.parse().map_err(|e| Error::usage(format!("{e}")))?,
            "dataset" => {
                self.dataset = match value {
                    "blobs" => DatasetKind::Blobs,
                    "idx" => DatasetKind::Idx,
                    "csv" => DatasetKind::Csv,
                    _ => return Err(Error::usage(format!("dataset: unknown kind `{value}`"))),
                }
            }
            "n" => self.n = parse(key, value)?,
            "classes" => self.classes = parse(key, value)?,
            "dim" => self.dim = parse(key, value)?,
            "spread" => self.spread = parse(key, value)?,
            "images" => self.images = opt_path(value),
            "labels" => self.labels = opt_path(value),
            "data" => self.data = opt_path(value),
            "label-column" => self.label_column = parse(key, value)?,
            "header" => self.header = parse_bool(key, value)?,
            "noise" => {
                self.noise = match value {
                    "none" => NoiseMode::None,
                    "sym" => NoiseMode::Sym,
                    "asym" => NoiseMode::Asym,
                    _ => return Err(Error::usage(format!("noise: unknown kind `{value}`"))),
                }
            }
            "rate" => self.rate = parse(key, value)?,
            "exclude-true" => self.exclude_true = parse_bool(key, value)?,
            "mapping" => self.mapping = (!value.is_empty()).then(|| value.to_string()),
            "alpha" => self.alpha = parse(key, value)?,
            "lambda" => self.lambda = parse(key, value)?,
            "warmup" => self.warmup = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "momentum" => self.momentum = parse(key, value)?,
            "weight-decay" => self.weight_decay = parse(key, value)?,
            "milestones" => self.milestones = parse_list(key, value)?,
            "decay" => self.decay = parse(key, value)?,
            "hidden" => self.hidden = parse_list(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "shuffle" => self.shuffle = parse_bool(key, value)?,
            "out" => self.out = PathBuf::from(value),
            "dump-targets" => self.dump_targets = parse_list(key, value)?,
            "features-out" => self.features_out = opt_path(value),
            _ => return Err(Error::usage(format!("unknown configuration key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key=value` document. Blank lines and `#` comments are ignored.
    pub fn apply_str(&mut self, text: &str, origin: &Path) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Format {
                path: origin.to_path_buf(),
                position: format!("line {}", n + 1),
                detail: format!("expected key=value, got `{line}`"),
            })?;
            self.set(key.trim(), value).map_err(|e| Error::Format {
                path: origin.to_path_buf(),
                position: format!("line {}", n + 1),
                detail: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_str(&text, path)
    }

    /// Every field as `key=value`, in a form [`RunConfig::apply_str`] reads back.
    pub fn to_kv(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        put("method", self.method.to_string());
        put("dataset", self.dataset.as_str().into());
        put("n", self.n.to_string());
        put("classes", self.classes.to_string());
        put("dim", self.dim.to_string());
        put("spread", self.spread.to_string());
        put("images", path(&self.images));
        put("labels", path(&self.labels));
        put("data", path(&self.data));
        put("label-column", self.label_column.to_string());
        put("header", self.header.to_string());
        put("noise", self.noise.as_str().into());
        put("rate", self.rate.to_string());
        put("exclude-true", self.exclude_true.to_string());
        put("mapping", self.mapping.clone().unwrap_or_default());
        put("alpha", self.alpha.to_string());
        put("lambda", self.lambda.to_string());
        put("warmup", self.warmup.to_string());
        put("epochs", self.epochs.to_string());
        put("batch", self.batch.to_string());
        put("lr", self.lr.to_string());
        put("momentum", self.momentum.to_string());
        put("weight-decay", self.weight_decay.to_string());
        put("milestones", join(&self.milestones));
        put("decay", self.decay.to_string());
        put("hidden", join(&self.hidden));
        put("seed", self.seed.to_string());
        put("shuffle", self.shuffle.to_string());
        put("out", self.out.display().to_string());
        put("dump-targets", join(&self.dump_targets));
        put("features-out", path(&self.features_out));
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            epochs: self.epochs,
            warmup: self.warmup,
            alpha: self.alpha,
            lambda: self.lambda,
            batch_size: self.batch,
            lr: self.lr,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            milestones: self.milestones.clone(),
            decay_factor: self.decay,
            hidden: self.hidden.clone(),
            seed: self.seed,
            shuffle: self.shuffle,
        }
    }
}
