//! Per-sample soft targets refined by temporal ensembling.
//!
//! During the first `warmup` epochs every target is the one-hot noisy label.
//! Afterwards, each time a sample is seen the target moves toward the
//! current prediction: `t <- alpha * t + (1 - alpha) * p`.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::numerics::{argmax, check_simplex, entropy_slice, ProbVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftLabelStore {
    classes: usize,
    /// Dense `n x classes`, row-major.
    targets: Vec<f64>,
    noisy_labels: Vec<usize>,
    alpha: f64,
    warmup: usize,
}

/// Fraction of corrupted samples whose target argmax is the true class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Recovery {
    pub rate: f64,
    /// Set when there were no corrupted samples; `rate` is then 0.
    pub empty: bool,
}

impl SoftLabelStore {
    pub fn new(noisy_labels: &[usize], classes: usize, alpha: f64, warmup: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::input("store needs at least one class"));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::config(format!("ensembling momentum {alpha} must lie in [0, 1)")));
        }
        if warmup == 0 {
            return Err(Error::config("warm-up must last at least one epoch"));
        }
        if let Some((i, &c)) = noisy_labels.iter().enumerate().find(|(_, &c)| c >= classes) {
            return Err(Error::input(format!(
                "label {c} of sample {i} out of range for {classes} classes"
            )));
        }
        let mut targets = alloc::vec![0.0; noisy_labels.len() * classes];
        for (row, &c) in targets.chunks_exact_mut(classes).zip(noisy_labels) {
            row[c] = 1.0;
        }
        Ok(SoftLabelStore {
            classes,
            targets,
            noisy_labels: noisy_labels.to_vec(),
            alpha,
            warmup,
        })
    }

    pub fn len(&self) -> usize {
        self.noisy_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.noisy_labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    pub fn noisy_labels(&self) -> &[usize] {
        &self.noisy_labels
    }

    /// True once `epoch` is past the warm-up phase.
    pub fn is_refining(&self, epoch: usize) -> bool {
        epoch >= self.warmup
    }

    fn check_index(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return Err(Error::input(format!(
                "sample {i} out of range for store of {}",
                self.len()
            )));
        }
        Ok(())
    }

    pub fn target(&self, i: usize) -> Result<&[f64]> {
        self.check_index(i)?;
        Ok(self.row(i))
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.targets[i * self.classes..(i + 1) * self.classes]
    }

    /// The one-hot encoding of the original noisy label.
    pub fn original(&self, i: usize) -> Result<ProbVector> {
        self.check_index(i)?;
        ProbVector::one_hot(self.classes, self.noisy_labels[i])
    }

    /// All targets, row-major `n x classes`.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    /// Applies the ensembling rule for sample `i` and returns its new target.
    /// Within the warm-up phase the target is left untouched.
    pub fn update_target(&mut self, i: usize, p: &ProbVector, epoch: usize) -> Result<ProbVector> {
        self.check_index(i)?;
        if p.len() != self.classes {
            return Err(Error::input(format!(
                "prediction has {} classes, store has {}",
                p.len(),
                self.classes
            )));
        }
        check_simplex(p.as_slice())?;
        let k = self.classes;
        let refining = self.is_refining(epoch);
        let a = self.alpha;
        let row = &mut self.targets[i * k..(i + 1) * k];
        if refining {
            for (t, &pk) in row.iter_mut().zip(p.as_slice()) {
                let v = a * *t + (1.0 - a) * pk;
                *t = if v > 1.0 { 1.0 } else { v };
            }
        }
        Ok(ProbVector::from_raw(row.to_vec()))
    }

    /// Mean Shannon entropy of the current targets (0 for an empty store).
    pub fn mean_entropy(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        let total: f64 = self.targets.chunks_exact(self.classes).map(entropy_slice).sum();
        total / self.len() as f64
    }

    pub fn recovery_rate(&self, true_labels: &[usize], corrupted: &[bool]) -> Result<Recovery> {
        if true_labels.len() != self.len() || corrupted.len() != self.len() {
            return Err(Error::input("label and mask lengths must match the store"));
        }
        let mut total = 0usize;
        let mut recovered = 0usize;
        for (i, (&y, &bad)) in true_labels.iter().zip(corrupted).enumerate() {
            if bad {
                total += 1;
                if argmax(self.row(i)) == y {
                    recovered += 1;
                }
            }
        }
        Ok(if total == 0 {
            Recovery { rate: 0.0, empty: true }
        } else {
            Recovery { rate: recovered as f64 / total as f64, empty: false }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[f64]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    #[test]
    fn init_is_one_hot() {
        let s = SoftLabelStore::new(&[2], 3, 0.9, 1).unwrap();
        assert_eq!(s.target(0).unwrap(), &[0.0, 0.0, 1.0]);
        assert_eq!(s.original(0).unwrap().as_slice(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn empty_store_is_valid() {
        let s = SoftLabelStore::new(&[], 3, 0.9, 1).unwrap();
        assert!(s.is_empty());
        assert_eq!(s.mean_entropy(), 0.0);
    }

    #[test]
    fn invalid_construction() {
        assert!(matches!(SoftLabelStore::new(&[0], 2, 1.0, 1), Err(Error::Config(_))));
        assert!(SoftLabelStore::new(&[0], 2, -0.1, 1).is_err());
        assert!(SoftLabelStore::new(&[0], 2, 0.5, 0).is_err());
        assert!(matches!(SoftLabelStore::new(&[0, 3], 3, 0.5, 1), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn hand_evaluated_update() {
        let mut s = SoftLabelStore::new(&[0], 2, 0.9, 1).unwrap();
        let t = s.update_target(0, &pv(&[0.6, 0.4]), 1).unwrap();
        assert!((t.as_slice()[0] - 0.96).abs() < 1e-15);
        assert!((t.as_slice()[1] - 0.04).abs() < 1e-15);
        assert_eq!(s.target(0).unwrap(), t.as_slice());
    }

    #[test]
    fn no_memory_copies_prediction() {
        let mut s = SoftLabelStore::new(&[1, 0], 3, 0.0, 2).unwrap();
        let p = pv(&[0.2, 0.3, 0.5]);
        assert_eq!(s.update_target(0, &p, 2).unwrap(), p);
    }

    #[test]
    fn prediction_equal_to_target_is_a_fixed_point() {
        let mut s = SoftLabelStore::new(&[1], 3, 0.7, 1).unwrap();
        let p = pv(&[0.0, 1.0, 0.0]);
        assert_eq!(s.update_target(0, &p, 5).unwrap(), p);
    }

    #[test]
    fn warmup_leaves_targets_untouched() {
        let mut s = SoftLabelStore::new(&[1, 2], 3, 0.9, 3).unwrap();
        let before = s.clone();
        for epoch in 0..3 {
            s.update_target(0, &pv(&[0.5, 0.25, 0.25]), epoch).unwrap();
        }
        assert_eq!(s, before);
        s.update_target(0, &pv(&[0.5, 0.25, 0.25]), 3).unwrap();
        assert_ne!(s, before);
    }

    #[test]
    fn update_rejects_bad_inputs() {
        let mut s = SoftLabelStore::new(&[1], 3, 0.9, 1).unwrap();
        assert!(s.update_target(1, &ProbVector::uniform(3).unwrap(), 2).is_err());
        assert!(s.update_target(0, &ProbVector::uniform(2).unwrap(), 2).is_err());
    }

    #[test]
    fn recovery_rate_cases() {
        let s = SoftLabelStore::new(&[0, 1, 2], 3, 0.9, 1).unwrap();
        let r = s.recovery_rate(&[0, 1, 2], &[false; 3]).unwrap();
        assert!(r.empty && r.rate == 0.0);
        // targets already sit at the true labels of the corrupted samples
        let r = s.recovery_rate(&[0, 1, 2], &[true, false, true]).unwrap();
        assert_eq!(r, Recovery { rate: 1.0, empty: false });
        let r = s.recovery_rate(&[1, 1, 0], &[true, false, true]).unwrap();
        assert_eq!(r.rate, 0.0);
        assert!(s.recovery_rate(&[0], &[true]).is_err());
    }

    #[test]
    fn recovery_ties_resolve_to_lowest_class() {
        let mut s = SoftLabelStore::new(&[1], 2, 0.5, 1).unwrap();
        s.update_target(0, &pv(&[1.0, 0.0]), 1).unwrap();
        assert_eq!(s.target(0).unwrap(), &[0.5, 0.5]);
        assert_eq!(s.recovery_rate(&[0], &[true]).unwrap().rate, 1.0);
        assert_eq!(s.recovery_rate(&[1], &[true]).unwrap().rate, 0.0);
    }
}
