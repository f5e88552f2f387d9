//! The two-phase training loop: plain cross-entropy on the original labels
//! during warm-up, then label refinement with the entropy-regularized loss.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;

use crate::data::NoisyDataset;
use crate::error::{Error, Result};
use crate::labels::SoftLabelStore;
use crate::model::{Gradients, MlpParams, DEFAULT_HIDDEN};
use crate::numerics::{
    alr_grad_logits, argmax, ce_grad_logits, entropy, soft_ce, softmax, LogitVector, ProbVector,
};
use crate::optim::{sgd_step, LrSchedule, OptimState};
use crate::rng::{self, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    /// Cross-entropy on the noisy labels for every epoch.
    Ce,
    /// Label refinement without the entropy term.
    LrOnly,
    /// Label refinement plus entropy regularization.
    Alr,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Alr, Method::LrOnly, Method::Ce];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::LrOnly => "lr",
            Method::Alr => "alr",
        }
    }

    fn uses_store(self) -> bool {
        !matches!(self, Method::Ce)
    }
}

impl core::fmt::Display for Method {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl core::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ce" => Ok(Method::Ce),
            "lr" | "lr_only" => Ok(Method::LrOnly),
            "alr" => Ok(Method::Alr),
            other => Err(Error::config(format!("unknown method `{other}` (ce, lr, alr)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    /// Warm-up length `m`; refinement starts at epoch `m`.
    pub warmup: usize,
    /// Ensembling momentum of the soft targets.
    pub alpha: f64,
    /// Weight of the entropy term.
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            method: Method::Alr,
            epochs: 60,
            warmup: 10,
            alpha: 0.9,
            lambda: 0.2,
            batch_size: 128,
            lr: 0.02,
            momentum: 0.9,
            weight_decay: 1e-3,
            milestones: vec![20, 40],
            decay_factor: 0.1,
            hidden: vec![DEFAULT_HIDDEN],
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn with_method(&self, method: Method) -> Self {
        TrainConfig { method, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup == 0 {
            return Err(Error::config("warm-up must last at least one epoch"));
        }
        if self.warmup > self.epochs {
            return Err(Error::config(format!(
                "warm-up ({}) longer than training ({} epochs)",
                self.warmup, self.epochs
            )));
        }
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::config(format!("alpha {} must lie in [0, 1)", self.alpha)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::config(format!("lambda {} must lie in (0, 1)", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if self.hidden.contains(&0) {
            return Err(Error::config("hidden layers need at least one unit"));
        }
        self.schedule().map(|_| ())
    }

    pub fn schedule(&self) -> Result<LrSchedule> {
        LrSchedule::new(self.lr, self.milestones.clone(), self.decay_factor)
    }

    /// `[dim, hidden..., classes]`.
    pub fn layer_sizes(&self, dim: usize, classes: usize) -> Vec<usize> {
        let mut sizes = vec![dim];
        sizes.extend_from_slice(&self.hidden);
        sizes.push(classes);
        sizes
    }

    /// A store holding the one-hot noisy labels of `train`.
    pub fn init_store(&self, train: &NoisyDataset) -> Result<SoftLabelStore> {
        SoftLabelStore::new(train.noisy_labels(), train.classes(), self.alpha, self.warmup)
    }
}

/// Per-epoch record. Field order is the metrics CSV column order.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub mean_train_loss: f64,
    pub train_acc_vs_noisy: f64,
    pub train_acc_vs_true: f64,
    pub test_acc: f64,
    pub clean_correct_frac: f64,
    pub noisy_correct_frac: f64,
    pub noisy_wrong_frac: f64,
    pub noisy_memorized_frac: f64,
    pub label_recovery: f64,
    pub mean_target_entropy: f64,
}

impl EpochMetrics {
    pub const FIELDS: [&'static str; 12] = [
        "epoch",
        "lr",
        "mean_train_loss",
        "train_acc_vs_noisy",
        "train_acc_vs_true",
        "test_acc",
        "clean_correct_frac",
        "noisy_correct_frac",
        "noisy_wrong_frac",
        "noisy_memorized_frac",
        "label_recovery",
        "mean_target_entropy",
    ];

    /// Values in [`Self::FIELDS`] order; `epoch` as a float.
    pub fn values(&self) -> [f64; 12] {
        [
            self.epoch as f64,
            self.lr,
            self.mean_train_loss,
            self.train_acc_vs_noisy,
            self.train_acc_vs_true,
            self.test_acc,
            self.clean_correct_frac,
            self.noisy_correct_frac,
            self.noisy_wrong_frac,
            self.noisy_memorized_frac,
            self.label_recovery,
            self.mean_target_entropy,
        ]
    }
}

/// Which label a prediction is scored against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reference {
    Noisy,
    True,
}

/// Prediction outcome fractions on the clean and corrupted subsets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemorizationStats {
    pub clean_correct: f64,
    pub clean_incorrect: f64,
    /// Prediction equals the true label.
    pub noisy_correct: f64,
    /// Prediction equals the erroneous noisy label.
    pub noisy_memorized: f64,
    /// Neither.
    pub noisy_wrong: f64,
    /// No clean samples; clean fractions are zero.
    pub clean_empty: bool,
    /// No corrupted samples; noisy fractions are zero.
    pub noisy_empty: bool,
}

/// Argmax class of every sample, lowest index on ties.
pub fn predictions(params: &MlpParams, ds: &NoisyDataset) -> Result<Vec<usize>> {
    (0..ds.len())
        .map(|i| params.logits(ds.input(i)).map(|z| argmax(&z)))
        .collect()
}

fn accuracy_of(preds: &[usize], labels: &[usize]) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::input("cannot evaluate an empty split"));
    }
    let hits = preds.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn evaluate(params: &MlpParams, ds: &NoisyDataset, reference: Reference) -> Result<f64> {
    let preds = predictions(params, ds)?;
    let labels = match reference {
        Reference::Noisy => ds.noisy_labels(),
        Reference::True => ds.true_labels(),
    };
    accuracy_of(&preds, labels)
}

pub fn memorization_from_predictions(preds: &[usize], ds: &NoisyDataset) -> Result<MemorizationStats> {
    if preds.len() != ds.len() {
        return Err(Error::input("one prediction per sample required"));
    }
    let (mut clean, mut clean_ok) = (0usize, 0usize);
    let (mut noisy, mut correct, mut memorized) = (0usize, 0usize, 0usize);
    for (i, &pred) in preds.iter().enumerate() {
        let y = ds.true_labels()[i];
        if ds.corrupted()[i] {
            noisy += 1;
            if pred == y {
                correct += 1;
            } else if pred == ds.noisy_labels()[i] {
                memorized += 1;
            }
        } else {
            clean += 1;
            if pred == y {
                clean_ok += 1;
            }
        }
    }
    let frac = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(MemorizationStats {
        clean_correct: frac(clean_ok, clean),
        clean_incorrect: frac(clean - clean_ok, clean),
        noisy_correct: frac(correct, noisy),
        noisy_memorized: frac(memorized, noisy),
        noisy_wrong: frac(noisy - correct - memorized, noisy),
        clean_empty: clean == 0,
        noisy_empty: noisy == 0,
    })
}

pub fn memorization_stats(params: &MlpParams, ds: &NoisyDataset) -> Result<MemorizationStats> {
    memorization_from_predictions(&predictions(params, ds)?, ds)
}

/// State handed to the per-epoch observer after the metrics are computed.
#[derive(Debug, Clone, Copy)]
pub struct EpochSnapshot<'a> {
    pub metrics: &'a EpochMetrics,
    pub store: &'a SoftLabelStore,
    pub params: &'a MlpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub metrics: Vec<EpochMetrics>,
    pub params: MlpParams,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

fn diverged(epoch: usize, batch: usize, detail: impl Into<String>) -> Error {
    Error::Diverged {
        epoch,
        batch,
        detail: detail.into(),
    }
}

pub fn train(
    config: &TrainConfig,
    train_set: &NoisyDataset,
    test_set: &NoisyDataset,
    store: &mut SoftLabelStore,
) -> Result<TrainOutcome> {
    train_with(config, train_set, test_set, store, |_| Ok(()))
}

/// Runs the full schedule, calling `observer` after every epoch.
pub fn train_with<F>(
    config: &TrainConfig,
    train_set: &NoisyDataset,
    test_set: &NoisyDataset,
    store: &mut SoftLabelStore,
    mut observer: F,
) -> Result<TrainOutcome>
where
    F: FnMut(EpochSnapshot<'_>) -> Result<()>,
{
    config.validate()?;
    if train_set.is_empty() || test_set.is_empty() {
        return Err(Error::input("training and test splits must be non-empty"));
    }
    if train_set.dim() != test_set.dim() || train_set.classes() != test_set.classes() {
        return Err(Error::input("training and test splits disagree on shape"));
    }
    if store.len() != train_set.len()
        || store.classes() != train_set.classes()
        || store.noisy_labels() != train_set.noisy_labels()
    {
        return Err(Error::input("label store does not match the training split"));
    }
    if store.alpha() != config.alpha || store.warmup() != config.warmup {
        return Err(Error::config("label store was built with a different alpha or warm-up"));
    }

    let schedule = config.schedule()?;
    let sizes = config.layer_sizes(train_set.dim(), train_set.classes());
    let mut params = MlpParams::init(&sizes, config.seed)?;
    let mut optim = OptimState::new(&params, schedule.initial_lr(), config.momentum, config.weight_decay)?;
    let mut grads = Gradients::zeros_like(&params);
    let k = train_set.classes();
    let n = train_set.len();
    let mut order: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        optim.learning_rate = schedule.lr_at(epoch);
        order.sort_unstable();
        if config.shuffle {
            order.shuffle(&mut rng::seeded(config.seed, stream::SHUFFLE_BASE + epoch as u64));
        }
        let refining = config.method.uses_store() && store.is_refining(epoch);
        let mut loss_total = 0.0;

        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            grads.fill_zero();
            let scale = 1.0 / batch.len() as f64;
            let mut batch_loss = 0.0;
            for &i in batch {
                let (z, cache) = params
                    .forward(train_set.input(i))
                    .map_err(|e| diverged(epoch, b, format!("forward pass on sample {i}: {e}")))?;
                let p = softmax(&z);
                let (loss, upstream) = if refining {
                    let t = store.update_target(i, &p, epoch)?;
                    match config.method {
                        Method::Alr => (
                            soft_ce(&t, &p)? + config.lambda * entropy(&p),
                            alr_grad_logits(&t, &p, config.lambda)?,
                        ),
                        _ => (soft_ce(&t, &p)?, ce_grad_logits(&t, &p)?),
                    }
                } else {
                    let t = ProbVector::one_hot(k, train_set.noisy_labels()[i])?;
                    (soft_ce(&t, &p)?, ce_grad_logits(&t, &p)?)
                };
                batch_loss += loss;
                params.backward_accumulate(&cache, &upstream, scale, &mut grads)?;
            }
            if !batch_loss.is_finite() {
                return Err(diverged(epoch, b, format!("batch loss is {batch_loss}")));
            }
            loss_total += batch_loss;
            sgd_step(&mut params, &grads, &mut optim).map_err(|e| match e {
                Error::NonFinite(what) => diverged(epoch, b, format!("non-finite {what}")),
                other => other,
            })?;
        }

        let metrics = epoch_metrics(epoch, optim.learning_rate, loss_total / n as f64, &params, train_set, test_set, store)?;
        observer(EpochSnapshot {
            metrics: &metrics,
            store,
            params: &params,
        })?;
        history.push(metrics);
    }

    Ok(TrainOutcome {
        metrics: history,
        params,
    })
}

fn epoch_metrics(
    epoch: usize,
    lr: f64,
    mean_train_loss: f64,
    params: &MlpParams,
    train_set: &NoisyDataset,
    test_set: &NoisyDataset,
    store: &SoftLabelStore,
) -> Result<EpochMetrics> {
    let preds = predictions(params, train_set)?;
    let mem = memorization_from_predictions(&preds, train_set)?;
    let recovery = store.recovery_rate(train_set.true_labels(), train_set.corrupted())?;
    Ok(EpochMetrics {
        epoch,
        lr,
        mean_train_loss,
        train_acc_vs_noisy: accuracy_of(&preds, train_set.noisy_labels())?,
        train_acc_vs_true: accuracy_of(&preds, train_set.true_labels())?,
        test_acc: evaluate(params, test_set, Reference::True)?,
        clean_correct_frac: mem.clean_correct,
        noisy_correct_frac: mem.noisy_correct,
        noisy_wrong_frac: mem.noisy_wrong,
        noisy_memorized_frac: mem.noisy_memorized,
        label_recovery: recovery.rate,
        mean_target_entropy: store.mean_entropy(),
    })
}

/// One row of an ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub method: Method,
    pub final_metrics: EpochMetrics,
}

/// Runs ALR, ALR without the entropy term, and plain CE with identical seed
/// and schedule.
pub fn run_ablation(base: &TrainConfig, train_set: &NoisyDataset, test_set: &NoisyDataset) -> Result<Vec<AblationRow>> {
    Method::ALL
        .iter()
        .map(|&method| {
            let config = base.with_method(method);
            let mut store = config.init_store(train_set)?;
            let outcome = train(&config, train_set, test_set, &mut store)?;
            let final_metrics = outcome
                .metrics
                .last()
                .cloned()
                .ok_or_else(|| Error::config("ablation needs at least one epoch"))?;
            Ok(AblationRow { method, final_metrics })
        })
        .collect()
}

/// Logits of every sample in `ds`, row-major.
pub fn logits_of(params: &MlpParams, ds: &NoisyDataset) -> Result<Vec<LogitVector>> {
    (0..ds.len())
        .map(|i| params.logits(ds.input(i)).and_then(LogitVector::new))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_blobs, inject_symmetric, Split};
    use crate::model::Dense;

    fn small_config(method: Method) -> TrainConfig {
        TrainConfig {
            method,
            epochs: 6,
            warmup: 3,
            milestones: vec![4],
            hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    fn noisy_blobs() -> crate::data::SplitDataset {
        let mut ds = gen_blobs(4, 240, 3, 2, 1.0).unwrap();
        inject_symmetric(&mut ds.train, 0.4, 4, false).unwrap();
        ds
    }

    #[test]
    fn config_validation() {
        let ok = TrainConfig::default();
        ok.validate().unwrap();
        for bad in [
            TrainConfig { warmup: 0, ..ok.clone() },
            TrainConfig { warmup: 61, ..ok.clone() },
            TrainConfig { alpha: 1.0, ..ok.clone() },
            TrainConfig { lambda: 0.0, ..ok.clone() },
            TrainConfig { lambda: 1.0, ..ok.clone() },
            TrainConfig { batch_size: 0, ..ok.clone() },
            TrainConfig { milestones: vec![30, 20], ..ok.clone() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
        }
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("gce".parse::<Method>().is_err());
    }

    #[test]
    fn warmup_prefix_is_identical_across_methods() {
        let ds = noisy_blobs();
        let run = |m| {
            let c = small_config(m);
            let mut store = c.init_store(&ds.train).unwrap();
            train(&c, &ds.train, &ds.test, &mut store).unwrap()
        };
        let ce = run(Method::Ce);
        let alr = run(Method::Alr);
        let lr = run(Method::LrOnly);
        assert_eq!(ce.metrics[..3], alr.metrics[..3]);
        assert_eq!(ce.metrics[..3], lr.metrics[..3]);
        assert_ne!(ce.metrics[3..], alr.metrics[3..]);
    }

    #[test]
    fn no_refinement_epochs_means_plain_ce() {
        let ds = noisy_blobs();
        let ce = small_config(Method::Ce);
        let alr = TrainConfig { warmup: ce.epochs, ..small_config(Method::Alr) };
        let ce = TrainConfig { warmup: ce.epochs, ..ce };
        let a = train(&alr, &ds.train, &ds.test, &mut alr.init_store(&ds.train).unwrap()).unwrap();
        let c = train(&ce, &ds.train, &ds.test, &mut ce.init_store(&ds.train).unwrap()).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn store_mismatch_is_rejected() {
        let ds = noisy_blobs();
        let c = small_config(Method::Alr);
        let mut wrong = SoftLabelStore::new(ds.train.noisy_labels(), 3, 0.5, 3).unwrap();
        assert!(train(&c, &ds.train, &ds.test, &mut wrong).is_err());
        let mut short = SoftLabelStore::new(&[0, 1], 3, 0.9, 3).unwrap();
        assert!(train(&c, &ds.train, &ds.test, &mut short).is_err());
    }

    #[test]
    fn huge_learning_rate_reports_divergence() {
        let ds = noisy_blobs();
        let c = TrainConfig { lr: 1e200, ..small_config(Method::Ce) };
        let err = train(&c, &ds.train, &ds.test, &mut c.init_store(&ds.train).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
    }

    #[test]
    fn fractions_close_every_epoch() {
        let ds = noisy_blobs();
        let c = small_config(Method::Alr);
        let out = train(&c, &ds.train, &ds.test, &mut c.init_store(&ds.train).unwrap()).unwrap();
        assert_eq!(out.metrics.len(), 6);
        for m in &out.metrics {
            let noisy = m.noisy_correct_frac + m.noisy_wrong_frac + m.noisy_memorized_frac;
            assert!((noisy - 1.0).abs() < 1e-9);
            assert!((0.0..=1.0).contains(&m.clean_correct_frac));
        }
    }

    fn labelled(true_labels: Vec<usize>, noisy: Vec<usize>) -> NoisyDataset {
        let n = true_labels.len();
        let x: Vec<f64> = (0..n).map(|i| i as f64).collect();
        NoisyDataset::from_parts(x, 1, true_labels, noisy, 4, Split::Train).unwrap()
    }

    #[test]
    fn evaluate_cases() {
        // logits [x, 0.5]
        let mut l = Dense::zeros(1, 2);
        l.weights = vec![1.0, 0.0];
        l.bias = vec![0.0, 0.5];
        let net = MlpParams::from_layers(vec![l]).unwrap();
        let ds = NoisyDataset::new(vec![0.0, 1.0, 2.0, 3.0], 1, vec![1, 0, 1, 1], 2, Split::Test).unwrap();
        assert_eq!(evaluate(&net, &ds, Reference::True).unwrap(), 0.5);
        let all = NoisyDataset::new(vec![0.0, 1.0, 2.0], 1, vec![1, 0, 0], 2, Split::Test).unwrap();
        assert_eq!(evaluate(&net, &all, Reference::True).unwrap(), 1.0);
        let empty = NoisyDataset::new(vec![], 1, vec![], 2, Split::Test).unwrap();
        assert!(matches!(evaluate(&net, &empty, Reference::True), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn memorization_extremes() {
        let ds = labelled(vec![0, 1, 2, 3, 0, 1], vec![1, 1, 3, 3, 2, 1]);
        let noisy_preds = ds.noisy_labels().to_vec();
        let m = memorization_from_predictions(&noisy_preds, &ds).unwrap();
        assert_eq!(m.noisy_memorized, 1.0);
        assert_eq!(m.clean_correct, 1.0);
        let true_preds = ds.true_labels().to_vec();
        let m = memorization_from_predictions(&true_preds, &ds).unwrap();
        assert_eq!((m.noisy_correct, m.noisy_memorized, m.noisy_wrong), (1.0, 0.0, 0.0));
    }

    #[test]
    fn uniform_logit_model_predicts_class_zero() {
        // corrupted: (true 0, noisy 1), (true 2, noisy 3), (true 0, noisy 2), (true 1, noisy 0)
        let ds = labelled(vec![0, 2, 0, 1, 3], vec![1, 3, 2, 0, 3]);
        let net = MlpParams::zeros(&[1, 4, 4]).unwrap();
        let m = memorization_stats(&net, &ds).unwrap();
        assert_eq!(m.noisy_correct, 0.5);
        assert_eq!(m.noisy_memorized, 0.25);
        assert_eq!(m.noisy_wrong, 0.25);
        assert_eq!(m.clean_correct, 0.0);
        assert!(!m.noisy_empty);
    }

    #[test]
    fn empty_subsets_are_flagged() {
        let ds = labelled(vec![0, 1], vec![0, 1]);
        let m = memorization_from_predictions(&[0, 0], &ds).unwrap();
        assert!(m.noisy_empty && !m.clean_empty);
        assert_eq!(m.noisy_memorized, 0.0);
    }

    #[test]
    fn ablation_on_clean_data_reports_three_rows() {
        let ds = gen_blobs(2, 120, 3, 2, 1.0).unwrap();
        let rows = run_ablation(&small_config(Method::Alr), &ds.train, &ds.test).unwrap();
        let methods: Vec<Method> = rows.iter().map(|r| r.method).collect();
        assert_eq!(methods, vec![Method::Alr, Method::LrOnly, Method::Ce]);
        assert!(rows.iter().all(|r| (0.0..=1.0).contains(&r.final_metrics.test_acc)));
    }
}
