//! Softmax, entropy, the soft-target cross-entropy and ALR losses, and their
//! analytic gradients with respect to the logits.
//!
//! All functions here are per-sample; averaging over a mini-batch is the
//! trainer's job. Logarithms are taken of `max(p, PROB_FLOOR)` so that a
//! probability that underflowed to zero never produces `-inf`.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Lower clamp applied to probabilities before taking a logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

/// Tolerance on `|sum(p) - 1|` accepted when validating a probability vector.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Default central-difference step.
pub const DEFAULT_FD_STEP: f64 = 1e-6;

#[inline]
fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
fn floored_ln(p: f64) -> f64 {
    ln(if p > PROB_FLOOR { p } else { PROB_FLOOR })
}

/// Unnormalized class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::input("logit vector is empty"));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(alloc::format!(
                "logit {k} is not finite ({})",
                values[k]
            )));
        }
        Ok(LogitVector(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex: a prediction `p` or a target `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates that every entry lies in `[0, 1]` and the entries sum to one
    /// within [`SIMPLEX_TOL`].
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_simplex(&values)?;
        Ok(ProbVector(values))
    }

    pub fn one_hot(classes: usize, class: usize) -> Result<Self> {
        if class >= classes {
            return Err(Error::input(alloc::format!(
                "class {class} out of range for {classes} classes"
            )));
        }
        let mut v = alloc::vec![0.0; classes];
        v[class] = 1.0;
        Ok(ProbVector(v))
    }

    pub fn uniform(classes: usize) -> Result<Self> {
        if classes == 0 {
            return Err(Error::input("uniform distribution over zero classes"));
        }
        Ok(ProbVector(alloc::vec![1.0 / classes as f64; classes]))
    }

    /// Skips validation. Callers guarantee the simplex invariant.
    pub(crate) fn from_raw(values: Vec<f64>) -> Self {
        ProbVector(values)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    /// Index of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> usize {
        argmax(&self.0)
    }
}

pub(crate) fn check_simplex(values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::input("probability vector is empty"));
    }
    let mut sum = 0.0;
    for (k, &v) in values.iter().enumerate() {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::input(alloc::format!(
                "probability {k} = {v} outside [0, 1]"
            )));
        }
        sum += v;
    }
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::input(alloc::format!(
            "probabilities sum to {sum}, not 1"
        )));
    }
    Ok(())
}

fn check_same_len(a: &ProbVector, b: &ProbVector) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::input(alloc::format!(
            "length mismatch: target has {} classes, prediction has {}",
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::config(alloc::format!(
            "entropy weight {lambda} must lie in (0, 1)"
        )));
    }
    Ok(())
}

/// Index of the maximum, lowest index on ties. NaN entries are never chosen
/// unless every entry is NaN.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] || values[best].is_nan() {
            best = k;
        }
    }
    best
}

/// Max-shifted softmax.
pub fn softmax(z: &LogitVector) -> ProbVector {
    ProbVector(softmax_slice(z.as_slice()))
}

pub(crate) fn softmax_slice(z: &[f64]) -> Vec<f64> {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = z.iter().map(|&v| libm::exp(v - max)).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

/// Shannon entropy in nats, with `0 log 0 = 0`.
pub fn entropy(p: &ProbVector) -> f64 {
    entropy_slice(p.as_slice())
}

pub(crate) fn entropy_slice(p: &[f64]) -> f64 {
    let h: f64 = -p
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| v * floored_ln(v))
        .sum::<f64>();
    // -0.0 and tiny negative round-off for one-hot inputs
    if h > 0.0 {
        h
    } else {
        0.0
    }
}

/// `-sum_k t_k log p_k` for one sample.
pub fn soft_ce(t: &ProbVector, p: &ProbVector) -> Result<f64> {
    check_same_len(t, p)?;
    let loss: f64 = -t
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .filter(|(&tk, _)| tk > 0.0)
        .map(|(&tk, &pk)| tk * floored_ln(pk))
        .sum::<f64>();
    if !loss.is_finite() {
        return Err(Error::NumericDomain(alloc::format!(
            "cross-entropy evaluated to {loss}"
        )));
    }
    Ok(loss)
}

/// `soft_ce(t, p) + lambda * H(p)` for one sample.
pub fn alr_loss(t: &ProbVector, p: &ProbVector, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Ok(soft_ce(t, p)? + lambda * entropy(p))
}

/// Gradient of `soft_ce(t, softmax(z))` with respect to `z`: `p - t`.
pub fn ce_grad_logits(t: &ProbVector, p: &ProbVector) -> Result<Vec<f64>> {
    check_same_len(t, p)?;
    Ok(t
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(&tk, &pk)| pk - tk)
        .collect())
}

/// Gradient of `alr_loss(t, softmax(z), lambda)` with respect to `z`,
///
/// ```text
/// dl/dz_j = p_j * (1 - lambda * (log p_j + H(p))) - t_j
/// ```
///
/// at every coordinate `j`. The target is a constant.
pub fn alr_grad_logits(t: &ProbVector, p: &ProbVector, lambda: f64) -> Result<Vec<f64>> {
    check_same_len(t, p)?;
    check_lambda(lambda)?;
    let h = entropy(p);
    Ok(t
        .as_slice()
        .iter()
        .zip(p.as_slice())
        .map(|(&tk, &pk)| pk * (1.0 - lambda * (floored_ln(pk) + h)) - tk)
        .collect())
}

/// Central differences `(f(z + h e_j) - f(z - h e_j)) / 2h` for every `j`.
pub fn finite_diff_grad<F>(f: F, z: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    debug_assert!(h > 0.0, "finite-difference step must be positive");
    let mut point = z.to_vec();
    let mut grad = Vec::with_capacity(z.len());
    for j in 0..z.len() {
        point[j] = z[j] + h;
        let plus = f(&point);
        point[j] = z[j] - h;
        let minus = f(&point);
        point[j] = z[j];
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Difference between the ALR and CE logit gradients at class `u`,
/// `-lambda * p_u * (log p_u + H(p))`.
///
/// Negative exactly when `p_u` exceeds [`confidence_threshold`].
pub fn sign_gap(p: &ProbVector, u: usize, lambda: f64) -> Result<f64> {
    let pu = *p.as_slice().get(u).ok_or_else(|| {
        Error::input(alloc::format!("class {u} out of range for {} classes", p.len()))
    })?;
    Ok(-lambda * pu * (floored_ln(pu) + entropy(p)))
}

/// The unique root of `x -> log x + H(p)` on `(0, 1)`, i.e. `exp(-H(p))`.
pub fn confidence_threshold(p: &ProbVector) -> f64 {
    libm::exp(-entropy(p))
}
