use alr_core::data::{gen_blobs, inject_asymmetric, inject_symmetric, NoisyDataset, Split};
use alr_core::numerics::{
    alr_grad_logits, ce_grad_logits, entropy, softmax, LogitVector, ProbVector,
};
use alr_core::SoftLabelStore;
use proptest::prelude::*;

fn logits(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-30.0f64..30.0, 2..=max_len)
}

fn simplex(k: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-5.0f64..5.0, k).prop_map(|z| softmax(&LogitVector::new(z).unwrap()).into_inner())
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

proptest! {
    #[test]
    fn softmax_lands_on_simplex(z in logits(12)) {
        let p = softmax(&LogitVector::new(z).unwrap());
        let sum: f64 = p.as_slice().iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        prop_assert!(p.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn softmax_ignores_shifts(z in logits(12), c in -100.0f64..100.0) {
        let p = softmax(&LogitVector::new(z.clone()).unwrap());
        let shifted: Vec<f64> = z.iter().map(|v| v + c).collect();
        let q = softmax(&LogitVector::new(shifted).unwrap());
        for (a, b) in p.as_slice().iter().zip(q.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-13, "{a} vs {b}");
        }
    }

    #[test]
    fn dyadic_shift_is_exact(z in prop::collection::vec(-64i32..64, 2..8), c in -64i32..64) {
        let z: Vec<f64> = z.into_iter().map(|v| v as f64 / 4.0).collect();
        let shifted: Vec<f64> = z.iter().map(|v| v + c as f64).collect();
        let p = softmax(&LogitVector::new(z).unwrap());
        let q = softmax(&LogitVector::new(shifted).unwrap());
        prop_assert_eq!(p, q);
    }

    #[test]
    fn gradient_gap_matches_closed_form(
        (p, t) in (2usize..10).prop_flat_map(|k| (simplex(k), simplex(k))),
        lambda in 0.01f64..0.99,
    ) {
        let p = ProbVector::new(p).unwrap();
        let t = ProbVector::new(t).unwrap();
        let ce = ce_grad_logits(&t, &p).unwrap();
        let alr = alr_grad_logits(&t, &p, lambda).unwrap();
        let h = entropy(&p);
        for j in 0..p.len() {
            let pj = p.as_slice()[j];
            let expected = -lambda * pj * (pj.max(1e-12).ln() + h);
            prop_assert!((alr[j] - ce[j] - expected).abs() <= 1e-12);
        }
    }

    #[test]
    fn ensembling_contracts_toward_prediction(
        (k, rounds) in (2usize..8, 1usize..20),
        alpha in 0.0f64..0.999,
        seed in any::<u64>(),
    ) {
        let label = (seed % k as u64) as usize;
        let mut store = SoftLabelStore::new(&[label], k, alpha, 1).unwrap();
        let mut state = seed;
        for _ in 0..rounds {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let z: Vec<f64> = (0..k).map(|j| ((state >> (j * 7 % 57)) & 0xff) as f64 / 32.0).collect();
            let p = softmax(&LogitVector::new(z).unwrap());
            let before = store.target(0).unwrap().to_vec();
            let after = store.update_target(0, &p, 1).unwrap();
            let lhs = l1(after.as_slice(), p.as_slice());
            let rhs = alpha * l1(&before, p.as_slice());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * (1.0 + rhs), "{lhs} vs {rhs}");
            let sum: f64 = after.as_slice().iter().sum();
            prop_assert!((sum - 1.0).abs() <= 1e-9);
            prop_assert!(after.as_slice().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
    }

    #[test]
    fn warmup_leaves_targets_one_hot(warmup in 1usize..6, label in 0usize..4, p in simplex(4)) {
        let mut store = SoftLabelStore::new(&[label], 4, 0.9, warmup).unwrap();
        let p = ProbVector::new(p).unwrap();
        for epoch in 0..warmup {
            store.update_target(0, &p, epoch).unwrap();
        }
        let one_hot = ProbVector::one_hot(4, label).unwrap();
        prop_assert_eq!(store.target(0).unwrap(), one_hot.as_slice());
    }

    #[test]
    fn symmetric_mask_matches_labels(rate in 0.0f64..0.95, seed in any::<u64>(), exclude in any::<bool>()) {
        let mut ds = gen_blobs(seed, 200, 4, 2, 1.0).unwrap().train;
        let n = ds.len();
        let report = inject_symmetric(&mut ds, rate, seed, exclude).unwrap();
        prop_assert_eq!(report.selected, (rate * n as f64).round() as usize);
        for i in 0..n {
            prop_assert_eq!(ds.corrupted()[i], ds.noisy_labels()[i] != ds.true_labels()[i]);
        }
        prop_assert_eq!(report.corrupted, ds.num_corrupted());
        if exclude {
            prop_assert_eq!(report.corrupted, report.selected);
        }
    }

    #[test]
    fn asymmetric_flips_follow_mapping(rate in 0.0f64..0.95, seed in any::<u64>()) {
        let mut ds = gen_blobs(seed, 200, 4, 2, 1.0).unwrap().train;
        let counts = ds.class_counts();
        let report = inject_asymmetric(&mut ds, rate, None, seed).unwrap();
        let expected: usize = counts.iter().map(|&c| (rate * c as f64).round() as usize).sum();
        prop_assert_eq!(report.selected, expected);
        prop_assert_eq!(report.corrupted, expected);
        for i in 0..ds.len() {
            if ds.corrupted()[i] {
                prop_assert_eq!(ds.noisy_labels()[i], (ds.true_labels()[i] + 1) % 4);
            }
        }
    }

    #[test]
    fn injection_is_deterministic(rate in 0.0f64..0.95, seed in any::<u64>()) {
        let base = gen_blobs(3, 120, 3, 2, 1.0).unwrap().train;
        let mut a = base.clone();
        let mut b = base;
        inject_symmetric(&mut a, rate, seed, false).unwrap();
        inject_symmetric(&mut b, rate, seed, false).unwrap();
        prop_assert_eq!(a, b);
    }
}

#[test]
fn identity_mapping_keeps_mask_consistent() {
    let labels: Vec<usize> = (0..40).map(|i| i % 4).collect();
    let mut ds = NoisyDataset::new(vec![0.0; 80], 2, labels, 4, Split::Train).unwrap();
    let report = inject_asymmetric(&mut ds, 0.5, Some(&[1, 2, 2, 0]), 1).unwrap();
    assert_eq!(report.selected, 20);
    // class 2 maps onto itself
    assert_eq!(report.corrupted, 15);
    for i in 0..ds.len() {
        assert_eq!(ds.corrupted()[i], ds.noisy_labels()[i] != ds.true_labels()[i]);
    }
}
