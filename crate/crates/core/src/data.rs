//! Datasets that keep the clean labels next to the noisy ones, a synthetic
//! Gaussian-blob generator, and label-noise injection.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::{self, stream};

/// Distance of every blob center from the origin.
pub const BLOB_RADIUS: f64 = 3.5;

/// Fraction of each class that goes to the training split.
pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

/// Features with noisy labels, the hidden true labels and the corruption mask.
///
/// `corrupted[i] == (noisy_labels[i] != true_labels[i])` always holds.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyDataset {
    /// Row-major `n x dim`.
    inputs: Vec<f64>,
    dim: usize,
    classes: usize,
    noisy_labels: Vec<usize>,
    true_labels: Vec<usize>,
    corrupted: Vec<bool>,
    split: Split,
}

impl NoisyDataset {
    /// A clean dataset: noisy labels equal the true labels.
    pub fn new(inputs: Vec<f64>, dim: usize, labels: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        Self::from_parts(inputs, dim, labels.clone(), labels, classes, split)
    }

    pub fn from_parts(
        inputs: Vec<f64>,
        dim: usize,
        true_labels: Vec<usize>,
        noisy_labels: Vec<usize>,
        classes: usize,
        split: Split,
    ) -> Result<Self> {
        if dim == 0 || classes == 0 {
            return Err(Error::config("dataset needs at least one feature and one class"));
        }
        if inputs.len() != dim * true_labels.len() || noisy_labels.len() != true_labels.len() {
            return Err(Error::input(format!(
                "{} feature values, {} true labels and {} noisy labels do not describe {dim}-dimensional samples",
                inputs.len(),
                true_labels.len(),
                noisy_labels.len()
            )));
        }
        if let Some(&c) = true_labels.iter().chain(&noisy_labels).find(|&&c| c >= classes) {
            return Err(Error::input(format!("label {c} out of range for {classes} classes")));
        }
        if let Some(i) = inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("feature {} of sample {} is not finite", i % dim, i / dim)));
        }
        if split == Split::Test && noisy_labels != true_labels {
            return Err(Error::input("test split cannot carry corrupted labels"));
        }
        let corrupted = noisy_labels.iter().zip(&true_labels).map(|(a, b)| a != b).collect();
        Ok(NoisyDataset {
            inputs,
            dim,
            classes,
            noisy_labels,
            true_labels,
            corrupted,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.true_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.true_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn input(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> &[f64] {
        &self.inputs
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    pub fn true_labels(&self) -> &[usize] {
        &self.true_labels
    }

    pub fn corrupted(&self) -> &[bool] {
        &self.corrupted
    }

    pub fn num_corrupted(&self) -> usize {
        self.corrupted.iter().filter(|&&c| c).count()
    }

    pub fn is_clean(&self) -> bool {
        self.num_corrupted() == 0
    }

    /// Fraction of samples whose noisy label differs from the true label.
    pub fn realized_noise_rate(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.num_corrupted() as f64 / self.len() as f64
        }
    }

    /// Samples per true class.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &c in &self.true_labels {
            counts[c] += 1;
        }
        counts
    }

    fn set_noisy(&mut self, i: usize, label: usize) {
        self.noisy_labels[i] = label;
        self.corrupted[i] = label != self.true_labels[i];
    }
}

/// A train/test pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitDataset {
    pub train: NoisyDataset,
    pub test: NoisyDataset,
}

/// Splits each class `TRAIN_FRACTION` / rest, then shuffles both halves.
pub fn stratified_split(
    inputs: &[f64],
    dim: usize,
    labels: &[usize],
    classes: usize,
    seed: u64,
) -> Result<SplitDataset> {
    if dim == 0 || inputs.len() != dim * labels.len() {
        return Err(Error::input("feature matrix does not match label count"));
    }
    if let Some(&c) = labels.iter().find(|&&c| c >= classes) {
        return Err(Error::input(format!("label {c} out of range for {classes} classes")));
    }
    let mut rng = rng::seeded(seed, stream::SPLIT);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for c in 0..classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(&mut rng);
        let n_train = libm::round(TRAIN_FRACTION * members.len() as f64) as usize;
        train_idx.extend_from_slice(&members[..n_train]);
        test_idx.extend_from_slice(&members[n_train..]);
    }
    train_idx.shuffle(&mut rng);
    test_idx.shuffle(&mut rng);
    let gather = |idx: &[usize], split| {
        let mut x = Vec::with_capacity(idx.len() * dim);
        for &i in idx {
            x.extend_from_slice(&inputs[i * dim..(i + 1) * dim]);
        }
        let y = idx.iter().map(|&i| labels[i]).collect();
        NoisyDataset::new(x, dim, y, classes, split)
    };
    Ok(SplitDataset {
        train: gather(&train_idx, Split::Train)?,
        test: gather(&test_idx, Split::Test)?,
    })
}

/// Center of blob `class`: evenly spaced on a circle of radius
/// [`BLOB_RADIUS`] in the first two coordinates, zero elsewhere.
pub fn blob_center(class: usize, classes: usize, dim: usize) -> Vec<f64> {
    center_on_circle(class, classes, dim, BLOB_RADIUS)
}

fn center_on_circle(class: usize, classes: usize, dim: usize, radius: f64) -> Vec<f64> {
    let angle = 2.0 * core::f64::consts::PI * class as f64 / classes as f64;
    let mut c = vec![0.0; dim];
    c[0] = radius * libm::cos(angle);
    c[1] = radius * libm::sin(angle);
    c
}

/// `classes` isotropic Gaussian clusters with standard deviation `spread`,
/// class sizes differing by at most one, split 80/20 per class.
pub fn gen_blobs(seed: u64, n: usize, classes: usize, dim: usize, spread: f64) -> Result<SplitDataset> {
    gen_blobs_with_radius(seed, n, classes, dim, spread, BLOB_RADIUS)
}

/// [`gen_blobs`] with the centers placed at distance `radius` from the origin.
pub fn gen_blobs_with_radius(
    seed: u64,
    n: usize,
    classes: usize,
    dim: usize,
    spread: f64,
    radius: f64,
) -> Result<SplitDataset> {
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(Error::config(format!("radius {radius} must be non-negative")));
    }
    if classes == 0 || n < classes {
        return Err(Error::config(format!("need n >= classes >= 1, got n={n}, classes={classes}")));
    }
    if dim < 2 {
        return Err(Error::config(format!("blobs need at least 2 dimensions, got {dim}")));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(Error::config(format!("spread {spread} must be positive")));
    }
    let mut rng = rng::seeded(seed, stream::BLOBS);
    let mut inputs = Vec::with_capacity(n * dim);
    let mut labels = Vec::with_capacity(n);
    for c in 0..classes {
        let count = n / classes + usize::from(c < n % classes);
        let center = center_on_circle(c, classes, dim, radius);
        for _ in 0..count {
            for &m in &center {
                let z: f64 = rng.sample(StandardNormal);
                inputs.push(m + spread * z);
            }
            labels.push(c);
        }
    }
    stratified_split(&inputs, dim, &labels, classes, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Selected labels are redrawn uniformly over the classes.
    Symmetric,
    /// Selected labels of each class are replaced by a fixed target class.
    Asymmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub rate: f64,
    /// Class -> class table for asymmetric noise; next-class circular if absent.
    pub mapping: Option<Vec<usize>>,
    pub seed: u64,
    /// Symmetric only: redraw among the other classes instead of all classes.
    pub exclude_true: bool,
    /// Permit injecting into a dataset that already carries noise.
    pub allow_reinject: bool,
}

impl NoiseSpec {
    pub fn symmetric(rate: f64, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Symmetric,
            rate,
            mapping: None,
            seed,
            exclude_true: false,
            allow_reinject: false,
        }
    }

    pub fn asymmetric(rate: f64, mapping: Option<Vec<usize>>, seed: u64) -> Self {
        NoiseSpec {
            kind: NoiseKind::Asymmetric,
            rate,
            mapping,
            seed,
            exclude_true: false,
            allow_reinject: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseReport {
    /// Samples picked for relabeling.
    pub selected: usize,
    /// Samples whose label now differs from the true label.
    pub corrupted: usize,
    /// `corrupted / n`.
    pub realized_rate: f64,
}

/// `c -> (c + 1) mod classes`.
pub fn circular_mapping(classes: usize) -> Vec<usize> {
    (0..classes).map(|c| (c + 1) % classes).collect()
}

/// CIFAR-10 pair flips (class order airplane, automobile, bird, cat, deer,
/// dog, frog, horse, ship, truck): truck -> automobile, bird -> airplane,
/// deer -> horse, cat <-> dog. Other classes map to themselves.
pub fn cifar10_mapping() -> Vec<usize> {
    let mut m: Vec<usize> = (0..10).collect();
    m[9] = 1;
    m[2] = 0;
    m[4] = 7;
    m[3] = 5;
    m[5] = 3;
    m
}

fn check_target(ds: &NoisyDataset, rate: f64, allow_reinject: bool) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config(format!("noise rate {rate} must lie in [0, 1)")));
    }
    if ds.split != Split::Train {
        return Err(Error::config("noise is only injected into the training split"));
    }
    if !allow_reinject && !ds.is_clean() {
        return Err(Error::config("dataset already carries label noise"));
    }
    Ok(())
}

fn report(ds: &NoisyDataset, selected: usize) -> NoiseReport {
    NoiseReport {
        selected,
        corrupted: ds.num_corrupted(),
        realized_rate: ds.realized_noise_rate(),
    }
}

/// Relabels exactly `round(rate * n)` samples, chosen without replacement,
/// with a label drawn uniformly over all classes (or over the other classes
/// when `exclude_true`).
pub fn inject_symmetric(ds: &mut NoisyDataset, rate: f64, seed: u64, exclude_true: bool) -> Result<NoiseReport> {
    symmetric(ds, rate, seed, exclude_true, false)
}

fn symmetric(ds: &mut NoisyDataset, rate: f64, seed: u64, exclude_true: bool, allow: bool) -> Result<NoiseReport> {
    check_target(ds, rate, allow)?;
    if exclude_true && ds.classes < 2 {
        return Err(Error::config("excluding the true class needs at least two classes"));
    }
    let mut rng = rng::seeded(seed, stream::NOISE);
    let count = libm::round(rate * ds.len() as f64) as usize;
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let (chosen, _) = order.partial_shuffle(&mut rng, count);
    let k = ds.classes;
    for &i in chosen.iter() {
        let label = if exclude_true {
            let y = ds.true_labels[i];
            let r = rng.random_range(0..k - 1);
            if r >= y {
                r + 1
            } else {
                r
            }
        } else {
            rng.random_range(0..k)
        };
        ds.set_noisy(i, label);
    }
    Ok(report(ds, count))
}

/// For every class `c`, relabels `round(rate * count_c)` of its samples,
/// chosen without replacement, as `mapping[c]` (next class if `None`).
pub fn inject_asymmetric(ds: &mut NoisyDataset, rate: f64, mapping: Option<&[usize]>, seed: u64) -> Result<NoiseReport> {
    asymmetric(ds, rate, mapping, seed, false)
}

fn asymmetric(
    ds: &mut NoisyDataset,
    rate: f64,
    mapping: Option<&[usize]>,
    seed: u64,
    allow: bool,
) -> Result<NoiseReport> {
    check_target(ds, rate, allow)?;
    let k = ds.classes;
    let mapping = match mapping {
        Some(m) => {
            if m.len() != k {
                return Err(Error::config(format!(
                    "mapping covers {} classes, dataset has {k}",
                    m.len()
                )));
            }
            if let Some(&bad) = m.iter().find(|&&c| c >= k) {
                return Err(Error::config(format!("mapping target {bad} out of range for {k} classes")));
            }
            m.to_vec()
        }
        None => circular_mapping(k),
    };
    let mut rng = rng::seeded(seed, stream::NOISE);
    let mut selected = 0;
    let source: Vec<usize> = ds.noisy_labels.clone();
    for c in 0..k {
        let mut members: Vec<usize> = (0..ds.len()).filter(|&i| source[i] == c).collect();
        let count = libm::round(rate * members.len() as f64) as usize;
        let (chosen, _) = members.partial_shuffle(&mut rng, count);
        for &i in chosen.iter() {
            ds.set_noisy(i, mapping[c]);
        }
        selected += count;
    }
    Ok(report(ds, selected))
}

/// Applies `spec` to the training split.
pub fn apply_noise(ds: &mut NoisyDataset, spec: &NoiseSpec) -> Result<NoiseReport> {
    match spec.kind {
        NoiseKind::Symmetric => symmetric(ds, spec.rate, spec.seed, spec.exclude_true, spec.allow_reinject),
        NoiseKind::Asymmetric => {
            asymmetric(ds, spec.rate, spec.mapping.as_deref(), spec.seed, spec.allow_reinject)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_train(n: usize, classes: usize) -> NoisyDataset {
        let labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
        NoisyDataset::new(vec![0.0; n], 1, labels, classes, Split::Train).unwrap()
    }

    fn nearest_center(x: &[f64], classes: usize) -> usize {
        let mut best = (f64::INFINITY, 0);
        for c in 0..classes {
            let d: f64 = blob_center(c, classes, x.len())
                .iter()
                .zip(x)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if d < best.0 {
                best = (d, c);
            }
        }
        best.1
    }

    #[test]
    fn blobs_sizes_and_split() {
        let ds = gen_blobs(1, 2003, 4, 3, 1.0).unwrap();
        let mut per_class = vec![0; 4];
        for d in [&ds.train, &ds.test] {
            for (c, n) in d.class_counts().into_iter().enumerate() {
                per_class[c] += n;
            }
        }
        assert_eq!(per_class, vec![501, 501, 501, 500]);
        assert_eq!(ds.train.class_counts(), vec![401, 401, 401, 400]);
        assert_eq!(ds.train.len() + ds.test.len(), 2003);
        assert!(ds.train.is_clean() && ds.test.is_clean());
        assert_eq!(ds.test.split(), Split::Test);
    }

    #[test]
    fn blobs_are_deterministic() {
        assert_eq!(gen_blobs(7, 400, 4, 2, 1.0).unwrap(), gen_blobs(7, 400, 4, 2, 1.0).unwrap());
        assert_ne!(gen_blobs(7, 400, 4, 2, 1.0).unwrap(), gen_blobs(8, 400, 4, 2, 1.0).unwrap());
    }

    #[test]
    fn tight_blobs_are_separable() {
        let ds = gen_blobs(3, 1000, 5, 2, 1e-3).unwrap();
        for d in [&ds.train, &ds.test] {
            for i in 0..d.len() {
                assert_eq!(nearest_center(d.input(i), 5), d.true_labels()[i]);
            }
        }
    }

    #[test]
    fn blob_config_errors() {
        assert!(matches!(gen_blobs(0, 3, 4, 2, 1.0), Err(Error::Config(_))));
        assert!(gen_blobs(0, 100, 4, 1, 1.0).is_err());
        assert!(gen_blobs(0, 100, 4, 2, 0.0).is_err());
    }

    #[test]
    fn zero_rate_is_a_no_op() {
        let clean = toy_train(100, 4);
        let mut ds = clean.clone();
        inject_symmetric(&mut ds, 0.0, 1, false).unwrap();
        assert_eq!(ds, clean);
        inject_asymmetric(&mut ds, 0.0, None, 1).unwrap();
        assert_eq!(ds, clean);
    }

    #[test]
    fn symmetric_selects_exact_count() {
        let mut ds = toy_train(1000, 4);
        let r = inject_symmetric(&mut ds, 0.37, 5, true).unwrap();
        assert_eq!(r.selected, 370);
        // excluding the true class makes every selected sample corrupted
        assert_eq!(r.corrupted, 370);
        assert_eq!(ds.num_corrupted(), 370);
    }

    #[test]
    fn symmetric_is_seeded() {
        let mut a = toy_train(500, 5);
        let mut b = toy_train(500, 5);
        inject_symmetric(&mut a, 0.4, 9, false).unwrap();
        inject_symmetric(&mut b, 0.4, 9, false).unwrap();
        assert_eq!(a, b);
        let mut c = toy_train(500, 5);
        inject_symmetric(&mut c, 0.4, 10, false).unwrap();
        assert_ne!(a.corrupted(), c.corrupted());
    }

    #[test]
    fn circular_asymmetric_flips_to_next_class() {
        let mut ds = toy_train(1000, 4);
        let r = inject_asymmetric(&mut ds, 0.4, None, 3).unwrap();
        assert_eq!(r.selected, 400);
        assert_eq!(r.corrupted, 400);
        for i in 0..ds.len() {
            if ds.corrupted()[i] {
                assert_eq!(ds.noisy_labels()[i], (ds.true_labels()[i] + 1) % 4);
            }
        }
        for c in 0..4 {
            let flipped = (0..ds.len()).filter(|&i| ds.true_labels()[i] == c && ds.corrupted()[i]).count();
            assert_eq!(flipped, 100);
        }
    }

    #[test]
    fn identity_entries_leave_mask_consistent() {
        let mut ds = toy_train(100, 4);
        let mapping = [1, 1, 3, 3];
        let r = inject_asymmetric(&mut ds, 0.4, Some(&mapping), 2).unwrap();
        assert_eq!(r.selected, 40);
        assert_eq!(r.corrupted, 20);
        for i in 0..ds.len() {
            assert_eq!(ds.corrupted()[i], ds.noisy_labels()[i] != ds.true_labels()[i]);
        }
    }

    #[test]
    fn cifar_mapping_pairs() {
        let m = cifar10_mapping();
        assert_eq!(m, vec![0, 1, 0, 5, 7, 3, 6, 7, 8, 1]);
    }

    #[test]
    fn injection_errors() {
        let mut ds = toy_train(100, 4);
        assert!(matches!(inject_symmetric(&mut ds, 1.0, 0, false), Err(Error::Config(_))));
        assert!(inject_symmetric(&mut ds, -0.1, 0, false).is_err());
        assert!(matches!(inject_asymmetric(&mut ds, 0.2, Some(&[0, 1, 2, 4]), 0), Err(Error::Config(_))));
        assert!(inject_asymmetric(&mut ds, 0.2, Some(&[0, 1, 2]), 0).is_err());
        let mut test = NoisyDataset::new(vec![0.0; 4], 1, vec![0, 1, 0, 1], 2, Split::Test).unwrap();
        assert!(inject_symmetric(&mut test, 0.5, 0, false).is_err());
    }

    #[test]
    fn reinjection_requires_opt_in() {
        let mut ds = toy_train(100, 4);
        inject_symmetric(&mut ds, 0.4, 1, true).unwrap();
        assert!(inject_symmetric(&mut ds, 0.4, 2, true).is_err());
        let mut spec = NoiseSpec::symmetric(0.4, 2);
        spec.allow_reinject = true;
        apply_noise(&mut ds, &spec).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.corrupted()[i], ds.noisy_labels()[i] != ds.true_labels()[i]);
        }
    }

    #[test]
    fn from_parts_validates() {
        assert!(NoisyDataset::from_parts(vec![0.0; 2], 1, vec![0, 1], vec![1, 1], 2, Split::Test).is_err());
        assert!(NoisyDataset::from_parts(vec![0.0; 3], 1, vec![0, 1], vec![1, 1], 2, Split::Train).is_err());
        let ds = NoisyDataset::from_parts(vec![0.0; 2], 1, vec![0, 1], vec![1, 1], 2, Split::Train).unwrap();
        assert_eq!(ds.corrupted(), &[true, false]);
    }
}
