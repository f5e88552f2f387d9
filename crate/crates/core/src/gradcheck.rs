//! Randomized self-check of the loss gradients.
//!
//! Each trial draws logits `z`, a target `t` and a weight `lambda`, then
//! verifies:
//!
//! * the gap between the ALR and CE logit gradients equals
//!   `-lambda * p_j * (log p_j + H(p))` at every coordinate,
//! * both analytic gradients agree with central differences,
//! * the gap is zero when the prediction is uniform,
//! * the sign of the gap is opposite to the sign of `log p_j + H(p)`, and
//!   `sign_gap` is negative exactly above the confidence threshold,
//! * `x -> log x + H(p)` changes sign exactly once on a dense grid of (0, 1).

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng as _;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::numerics::{
    alr_grad_logits, alr_loss, ce_grad_logits, confidence_threshold, entropy, finite_diff_grad,
    sign_gap, soft_ce, softmax, softmax_slice, LogitVector, ProbVector, DEFAULT_FD_STEP, PROB_FLOOR,
};
use crate::rng::{self, stream};

pub const IDENTITY_TOL: f64 = 1e-12;
pub const FD_REL_TOL: f64 = 1e-6;
pub const UNIFORM_TOL: f64 = 1e-12;
/// Sign checks are skipped where `|log p_j + H(p)|` is below this.
pub const SIGN_DEADBAND: f64 = 1e-9;
const ROOT_GRID: usize = 10_000;
const MAX_RECORDED_FAILURES: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckConfig {
    pub trials: usize,
    pub seed: u64,
    pub min_classes: usize,
    pub max_classes: usize,
    /// Standard deviation of the sampled logits.
    pub logit_scale: f64,
    pub fd_step: f64,
    /// Added to every ALR gradient component before checking. Only useful as
    /// a negative control.
    pub perturb: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            trials: 1000,
            seed: 0,
            min_classes: 2,
            max_classes: 10,
            logit_scale: 2.0,
            fd_step: DEFAULT_FD_STEP,
            perturb: 0.0,
        }
    }
}

/// The draw that broke a check.
#[derive(Debug, Clone, PartialEq)]
pub struct Failure {
    pub trial: usize,
    pub seed: u64,
    pub check: &'static str,
    pub detail: String,
    pub p: Vec<f64>,
    pub t: Vec<f64>,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GradcheckReport {
    pub trials: usize,
    pub max_identity_err: f64,
    pub max_ce_fd_rel_err: f64,
    pub max_alr_fd_rel_err: f64,
    pub max_uniform_err: f64,
    pub sign_checks: usize,
    pub sign_violations: usize,
    pub threshold_violations: usize,
    pub root_failures: usize,
    pub failure_count: usize,
    /// The first few failures, in trial order.
    pub failures: Vec<Failure>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.failure_count == 0
    }
}

/// `max_j |a_j - b_j| / max(max_j |a_j|, max_j |b_j|)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    let scale = a.iter().chain(b).fold(0.0f64, |m, v| m.max(v.abs()));
    if diff == 0.0 {
        0.0
    } else {
        diff / scale.max(f64::MIN_POSITIVE)
    }
}

/// Number of sign changes of `x -> log x + h` over the midpoints of a
/// uniform `cells`-cell grid of (0, 1).
pub fn root_sign_changes(h: f64, cells: usize) -> usize {
    let mut changes = 0;
    let mut prev: Option<bool> = None;
    for i in 0..cells {
        let x = (i as f64 + 0.5) / cells as f64;
        let positive = libm::log(x) + h > 0.0;
        if prev.is_some_and(|p| p != positive) {
            changes += 1;
        }
        prev = Some(positive);
    }
    changes
}

fn sign(x: f64) -> i8 {
    if x > 0.0 {
        1
    } else if x < 0.0 {
        -1
    } else {
        0
    }
}

struct Recorder<'a> {
    report: &'a mut GradcheckReport,
    trial: usize,
    seed: u64,
    p: &'a [f64],
    t: &'a [f64],
    lambda: f64,
}

impl Recorder<'_> {
    fn fail(&mut self, check: &'static str, detail: String) {
        self.report.failure_count += 1;
        if self.report.failures.len() < MAX_RECORDED_FAILURES {
            self.report.failures.push(Failure {
                trial: self.trial,
                seed: self.seed,
                check,
                detail,
                p: self.p.to_vec(),
                t: self.t.to_vec(),
                lambda: self.lambda,
            });
        }
    }
}

pub fn run(config: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut rng = rng::seeded(config.seed, stream::GRADCHECK);
    let mut report = GradcheckReport {
        trials: config.trials,
        ..GradcheckReport::default()
    };
    let h = config.fd_step;

    for trial in 0..config.trials {
        let k = rng.random_range(config.min_classes..=config.max_classes);
        let draw = |rng: &mut rng::Rng| -> Vec<f64> {
            (0..k)
                .map(|_| config.logit_scale * rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        let z = draw(&mut rng);
        // every fourth target is a hard label, the rest are soft
        let t_vals = if trial % 4 == 0 {
            let mut v = alloc::vec![0.0; k];
            v[rng.random_range(0..k)] = 1.0;
            v
        } else {
            softmax_slice(&draw(&mut rng))
        };
        let lambda = rng.random_range(0.01..0.99);

        let logits = LogitVector::new(z.clone())?;
        let p = softmax(&logits);
        let t = ProbVector::new(t_vals)?;
        let mut rec = Recorder {
            report: &mut report,
            trial,
            seed: config.seed,
            p: p.as_slice(),
            t: t.as_slice(),
            lambda,
        };

        let ce = ce_grad_logits(&t, &p)?;
        let mut alr = alr_grad_logits(&t, &p, lambda)?;
        for g in &mut alr {
            *g += config.perturb;
        }
        let hp = entropy(&p);

        let mut identity_err = 0.0f64;
        let mut sign_bad = 0;
        for j in 0..k {
            let pj = p.as_slice()[j];
            let f = libm::log(pj.max(PROB_FLOOR)) + hp;
            let gap = alr[j] - ce[j];
            identity_err = identity_err.max((gap - (-lambda * pj * f)).abs());
            if f.abs() > SIGN_DEADBAND {
                rec.report.sign_checks += 1;
                if sign(gap) != -sign(f) {
                    sign_bad += 1;
                }
            }
        }
        rec.report.max_identity_err = rec.report.max_identity_err.max(identity_err);
        if identity_err > IDENTITY_TOL {
            rec.fail("identity", format!("max abs error {identity_err:e}"));
        }
        if sign_bad > 0 {
            rec.report.sign_violations += sign_bad;
            rec.fail("sign", format!("{sign_bad} coordinates with the wrong sign"));
        }

        let eps = confidence_threshold(&p);
        let mut threshold_bad = 0;
        for u in 0..k {
            let pu = p.as_slice()[u];
            let f = libm::log(pu.max(PROB_FLOOR)) + hp;
            if f.abs() <= SIGN_DEADBAND {
                continue;
            }
            let g = sign_gap(&p, u, lambda)?;
            if (g < 0.0) != (pu > eps) {
                threshold_bad += 1;
            }
        }
        if threshold_bad > 0 {
            rec.report.threshold_violations += threshold_bad;
            rec.fail("threshold", format!("{threshold_bad} classes on the wrong side of exp(-H)"));
        }

        let ce_fd = finite_diff_grad(
            |x| soft_ce(&t, &ProbVector::from_raw(softmax_slice(x))).unwrap_or(f64::NAN),
            &z,
            h,
        );
        let alr_fd = finite_diff_grad(
            |x| alr_loss(&t, &ProbVector::from_raw(softmax_slice(x)), lambda).unwrap_or(f64::NAN),
            &z,
            h,
        );
        let ce_err = relative_error(&ce, &ce_fd);
        let alr_err = relative_error(&alr, &alr_fd);
        rec.report.max_ce_fd_rel_err = rec.report.max_ce_fd_rel_err.max(ce_err);
        rec.report.max_alr_fd_rel_err = rec.report.max_alr_fd_rel_err.max(alr_err);
        if ce_err.is_nan() || ce_err > FD_REL_TOL {
            rec.fail("ce-finite-difference", format!("relative error {ce_err:e}"));
        }
        if alr_err.is_nan() || alr_err > FD_REL_TOL {
            rec.fail("alr-finite-difference", format!("relative error {alr_err:e}"));
        }

        let uniform = ProbVector::uniform(k)?;
        let ce_u = ce_grad_logits(&t, &uniform)?;
        let alr_u = alr_grad_logits(&t, &uniform, lambda)?;
        let uniform_err = ce_u
            .iter()
            .zip(&alr_u)
            .fold(0.0f64, |m, (c, a)| m.max((a + config.perturb - c).abs()));
        rec.report.max_uniform_err = rec.report.max_uniform_err.max(uniform_err);
        if uniform_err > UNIFORM_TOL {
            rec.fail("uniform", format!("max abs difference {uniform_err:e}"));
        }

        let changes = root_sign_changes(hp, ROOT_GRID);
        if changes != 1 {
            rec.report.root_failures += 1;
            rec.fail("root", format!("{changes} sign changes of log x + {hp}"));
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_suite_passes() {
        let report = run(&GradcheckConfig::default()).unwrap();
        assert!(report.passed(), "{:?}", report.failures);
        assert!(report.max_identity_err <= IDENTITY_TOL);
        assert!(report.sign_checks > 1000);
    }

    #[test]
    fn zero_trials_is_vacuous() {
        let report = run(&GradcheckConfig { trials: 0, ..Default::default() }).unwrap();
        assert!(report.passed());
        assert_eq!(report.sign_checks, 0);
    }

    #[test]
    fn perturbation_is_caught() {
        let report = run(&GradcheckConfig { trials: 20, perturb: 1e-3, ..Default::default() }).unwrap();
        assert!(!report.passed());
        assert_eq!(report.failures[0].check, "identity");
        assert_eq!(report.failures[0].trial, 0);
    }

    #[test]
    fn root_grid_counts() {
        assert_eq!(root_sign_changes(0.5, 1000), 1);
        assert_eq!(root_sign_changes(libm::log(10.0), 1000), 1);
        // no root inside (0, 1) for negative offsets
        assert_eq!(root_sign_changes(-0.1, 1000), 0);
    }

    #[test]
    fn relative_error_basics() {
        assert_eq!(relative_error(&[1.0, 2.0], &[1.0, 2.0]), 0.0);
        assert!((relative_error(&[1.0, 2.0], &[1.0, 2.2]) - 0.2 / 2.2).abs() < 1e-15);
    }
}
