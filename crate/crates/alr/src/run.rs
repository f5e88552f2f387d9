//! Loading data, running experiments and laying out run directories.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use alr_core::data::{
    apply_noise, cifar10_mapping, circular_mapping, gen_blobs, stratified_split, NoiseReport, NoiseSpec,
    SplitDataset,
};
use alr_core::trainer::{run_ablation, train_with, AblationRow, EpochMetrics};
use alr_core::MlpParams;

use crate::config::{DatasetKind, NoiseMode, RunConfig};
use crate::error::{Error, Result};
use crate::output::{self, DatasetManifest, RunManifest, Summary};
use crate::{idx, table};

/// Sweep values of `lambda` are clipped into this closed range.
pub const LAMBDA_CLIP: (f64, f64) = (1e-3, 0.999);

#[derive(Debug, Clone)]
pub struct Prepared {
    pub data: SplitDataset,
    pub mapping: Option<Vec<usize>>,
    pub report: Option<NoiseReport>,
}

pub fn read_mapping(spec: &str, classes: usize) -> Result<Vec<usize>> {
    let mapping = match spec {
        "circular" => circular_mapping(classes),
        "cifar10" => cifar10_mapping(),
        path => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            text.split(|c: char| c == ',' || c.is_whitespace())
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.parse::<usize>().map_err(|_| Error::Format {
                        path: path.into(),
                        position: "mapping".into(),
                        detail: format!("`{s}` is not a class index"),
                    })
                })
                .collect::<Result<_>>()?
        }
    };
    if mapping.len() != classes {
        return Err(Error::usage(format!(
            "mapping has {} entries for {classes} classes",
            mapping.len()
        )));
    }
    Ok(mapping)
}

/// Builds the train/test split and injects the configured noise.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let mut data = match cfg.dataset {
        DatasetKind::Blobs => gen_blobs(cfg.seed, cfg.n, cfg.classes, cfg.dim, cfg.spread)?,
        DatasetKind::Idx => {
            let (images, labels) = match (&cfg.images, &cfg.labels) {
                (Some(i), Some(l)) => (i, l),
                _ => return Err(Error::usage("--dataset idx needs --images and --labels")),
            };
            let (imgs, lbls) = idx::read_idx(images, labels)?;
            let classes = lbls.iter().max().map_or(0, |m| m + 1);
            stratified_split(&imgs.pixels, imgs.dim(), &lbls, classes, cfg.seed)?
        }
        DatasetKind::Csv => {
            let path = cfg.data.as_ref().ok_or_else(|| Error::usage("--dataset csv needs --data"))?;
            let t = table::read_csv(path, cfg.label_column, cfg.header)?;
            let classes = t.classes();
            stratified_split(&t.features, t.dim, &t.labels, classes, cfg.seed)?
        }
    };
    let classes = data.train.classes();
    let (spec, mapping) = match cfg.noise {
        NoiseMode::None => {
            if cfg.rate != 0.0 {
                return Err(Error::usage("--rate given with --noise none"));
            }
            return Ok(Prepared {
                data,
                mapping: None,
                report: None,
            });
        }
        NoiseMode::Sym => {
            let mut spec = NoiseSpec::symmetric(cfg.rate, cfg.seed);
            spec.exclude_true = cfg.exclude_true;
            (spec, None)
        }
        NoiseMode::Asym => {
            let mapping = read_mapping(cfg.mapping.as_deref().unwrap_or("circular"), classes)?;
            (NoiseSpec::asymmetric(cfg.rate, Some(mapping.clone()), cfg.seed), Some(mapping))
        }
    };
    let report = apply_noise(&mut data.train, &spec)?;
    Ok(Prepared {
        data,
        mapping,
        report: Some(report),
    })
}

/// Creates `<root>/<timestamp>-<command>-<seed>`, adding a suffix on collision.
pub fn create_run_dir(root: &Path, command: &str, seed: u64) -> Result<PathBuf> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let stamp = chrono::Local::now().format("%Y%m%dT%H%M%S");
    let base = format!("{stamp}-{command}-{seed}");
    for attempt in 0.. {
        let name = if attempt == 0 { base.clone() } else { format!("{base}.{attempt}") };
        let dir = root.join(name);
        match fs::create_dir(&dir) {
            Ok(()) => return Ok(dir),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => continue,
            Err(e) => return Err(Error::io(&dir, e)),
        }
    }
    unreachable!()
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub dir: PathBuf,
    pub metrics: Vec<EpochMetrics>,
    pub params: MlpParams,
    pub manifest: RunManifest,
}

fn finish(dir: &Path, mut manifest: RunManifest, started: Instant) -> Result<RunManifest> {
    let path = dir.join("manifest.json");
    manifest.add("manifest", &path);
    manifest.wall_clock_seconds = started.elapsed().as_secs_f64();
    output::write_json(&path, &manifest)?;
    Ok(manifest)
}

fn write_config(dir: &Path, cfg: &RunConfig, manifest: &mut RunManifest) -> Result<()> {
    let path = dir.join("config.txt");
    output::write_bytes(&path, cfg.to_kv().as_bytes())?;
    manifest.add("config", path);
    Ok(())
}

/// One training run with every artifact written to `dir`.
pub fn train_in(cfg: &RunConfig, dir: &Path) -> Result<TrainResult> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("train", cfg);
    write_config(dir, cfg, &mut manifest)?;

    let prepared = prepare(cfg)?;
    let SplitDataset { train, test } = &prepared.data;
    let noise = output::noise_summary(cfg, prepared.mapping.clone(), prepared.report);
    let dataset = DatasetManifest::new(train, test, cfg.seed, noise);
    for path in output::dump_dataset(dir, &dataset, train, test)? {
        manifest.add("dataset", path);
    }
    manifest.dataset = Some(dataset);

    let tc = cfg.train_config();
    let mut store = tc.init_store(train)?;
    let mut dumped = Vec::new();
    let outcome = train_with(&tc, train, test, &mut store, |snap| {
        let epoch = snap.metrics.epoch;
        if cfg.dump_targets.contains(&epoch) {
            let path = dir.join(format!("targets_epoch_{epoch}.csv"));
            output::write_targets_csv(&path, snap.store)
                .map_err(|e| alr_core::Error::InvalidState(e.to_string()))?;
            dumped.push(path);
        }
        Ok(())
    })?;
    for path in dumped {
        manifest.add("targets", path);
    }

    let metrics_path = dir.join("metrics.csv");
    output::write_metrics_csv(&metrics_path, &outcome.metrics)?;
    manifest.add("metrics", metrics_path);

    let last = outcome
        .final_metrics()
        .ok_or_else(|| Error::usage("no epochs were run"))?;
    let summary = Summary {
        command: "train".into(),
        config: cfg.clone(),
        epochs_run: outcome.metrics.len(),
        final_metrics: output::metrics_map(last),
        realized_noise_rate: train.realized_noise_rate(),
    };
    let summary_path = dir.join("summary.json");
    output::write_json(&summary_path, &summary)?;
    manifest.add("summary", summary_path);

    let ckpt = dir.join("checkpoint.bin");
    output::write_bytes(&ckpt, &outcome.params.to_bytes())?;
    manifest.add("checkpoint", ckpt);

    if let Some(features) = &cfg.features_out {
        let path = if features.is_absolute() { features.clone() } else { dir.join(features) };
        output::write_features_csv(&path, &outcome.params, train, test)?;
        manifest.add("features", path);
    }

    let manifest = finish(dir, manifest, started)?;
    Ok(TrainResult {
        dir: dir.to_path_buf(),
        metrics: outcome.metrics,
        params: outcome.params,
        manifest,
    })
}

pub fn train(cfg: &RunConfig) -> Result<TrainResult> {
    let dir = create_run_dir(&cfg.out, "train", cfg.seed)?;
    train_in(cfg, &dir)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub alphas: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub warmups: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub alpha: f64,
    pub lambda: f64,
    pub warmup: usize,
    pub final_metrics: EpochMetrics,
}

pub fn clip_lambda(lambda: f64) -> f64 {
    lambda.clamp(LAMBDA_CLIP.0, LAMBDA_CLIP.1)
}

impl Grid {
    /// Grid points in row-major order (alpha slowest), lambda already clipped.
    pub fn points(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for &a in &self.alphas {
            for &l in &self.lambdas {
                for &m in &self.warmups {
                    out.push((a, clip_lambda(l), m));
                }
            }
        }
        out
    }
}

/// Trains every grid point, `jobs` at a time, each in its own subdirectory.
pub fn sweep_in(cfg: &RunConfig, grid: &Grid, dir: &Path, jobs: usize) -> Result<Vec<SweepPoint>> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("sweep", cfg);
    write_config(dir, cfg, &mut manifest)?;
    let points = grid.points();
    if points.is_empty() {
        return Err(Error::usage("empty sweep grid"));
    }
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<SweepPoint>>>> = Mutex::new((0..points.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs.clamp(1, points.len()) {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(alpha, lambda, warmup)) = points.get(i) else { break };
                let point_cfg = RunConfig {
                    alpha,
                    lambda,
                    warmup,
                    features_out: None,
                    ..cfg.clone()
                };
                let sub = dir.join(format!("point-{i:03}"));
                let res = fs::create_dir(&sub)
                    .map_err(|e| Error::io(&sub, e))
                    .and_then(|_| train_in(&point_cfg, &sub))
                    .and_then(|r| {
                        let final_metrics = r.metrics.last().cloned().ok_or_else(|| Error::usage("no epochs were run"))?;
                        Ok(SweepPoint {
                            alpha,
                            lambda,
                            warmup,
                            final_metrics,
                        })
                    });
                results.lock().unwrap()[i] = Some(res);
            });
        }
    });
    let rows: Vec<SweepPoint> = results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|r| r.expect("every grid point runs"))
        .collect::<Result<_>>()?;

    let path = dir.join("sweep.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["alpha", "lambda", "warmup", "test_acc", "noisy_memorized_frac", "label_recovery"])?;
    for r in &rows {
        w.write_record([
            r.alpha.to_string(),
            r.lambda.to_string(),
            r.warmup.to_string(),
            r.final_metrics.test_acc.to_string(),
            r.final_metrics.noisy_memorized_frac.to_string(),
            r.final_metrics.label_recovery.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    manifest.add("sweep", path);
    for i in 0..rows.len() {
        manifest.add("point", dir.join(format!("point-{i:03}")).join("manifest.json"));
    }
    finish(dir, manifest, started)?;
    Ok(rows)
}

pub fn ablate_in(cfg: &RunConfig, dir: &Path) -> Result<Vec<AblationRow>> {
    let started = Instant::now();
    let mut manifest = RunManifest::new("ablate", cfg);
    write_config(dir, cfg, &mut manifest)?;
    let prepared = prepare(cfg)?;
    let rows = run_ablation(&cfg.train_config(), &prepared.data.train, &prepared.data.test)?;
    let path = dir.join("ablation.csv");
    output::write_ablation_csv(&path, &rows)?;
    manifest.add("ablation", path);
    let noise = output::noise_summary(cfg, prepared.mapping, prepared.report);
    manifest.dataset = Some(DatasetManifest::new(&prepared.data.train, &prepared.data.test, cfg.seed, noise));
    finish(dir, manifest, started)?;
    Ok(rows)
}
