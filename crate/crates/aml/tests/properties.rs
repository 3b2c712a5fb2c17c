//! Property-based invariants of the numeric primitives.

use aml::bootstrap::{basic_ci, quantile};
use aml::estimator::Normalizer;
use aml::kde::{
    kde_log_likelihood, modified_gaussian_kernel, silverman_bandwidth, BandwidthMatrix,
    KdeConfig, SummaryVector,
};
use aml::spsa::{
    gradient_estimate, update_iterate, GainSchedule, ParameterSpace, Perturbation,
};
use aml::tuning::student_t_cdf;
use aml::StreamKey;
use proptest::prelude::*;

fn finite(range: std::ops::Range<f64>) -> impl Strategy<Value = f64> {
    prop::num::f64::NORMAL.prop_filter("in range", move |x| range.contains(x))
}

proptest! {
    #[test]
    fn kernel_is_strictly_decreasing(q1 in 0.0..1e6f64, gap in 1e-6..1e3f64) {
        let lo = modified_gaussian_kernel(q1).unwrap();
        let hi = modified_gaussian_kernel(q1 + gap).unwrap();
        prop_assert!(hi < lo);
    }

    #[test]
    fn normalizer_round_trips(
        lower in prop::collection::vec(finite(-1e6..1e6), 1..6),
        widths in prop::collection::vec(finite(1e-6..1e6), 1..6),
        fracs in prop::collection::vec(0.0..1.0f64, 1..6),
    ) {
        let p = lower.len().min(widths.len()).min(fracs.len());
        let lower = lower[..p].to_vec();
        let upper: Vec<f64> = lower.iter().zip(&widths[..p]).map(|(l, w)| l + w).collect();
        let space = ParameterSpace::new(lower.clone(), upper.clone()).unwrap();
        let theta: Vec<f64> = (0..p).map(|i| lower[i] + fracs[i] * (upper[i] - lower[i])).collect();
        let norm = Normalizer::new(space);
        let back = norm.from_unit(&norm.to_unit(&theta));
        for (orig, round) in theta.iter().zip(&back) {
            let scale = orig.abs().max(1.0);
            prop_assert!((orig - round).abs() <= 1e-12 * scale);
        }
    }

    #[test]
    fn kde_duplication_invariance(
        samples in prop::collection::vec(prop::collection::vec(-10.0..10.0f64, 3), 1..8),
        copies in 2usize..5,
    ) {
        let cfg = KdeConfig::default();
        let target = SummaryVector::new(vec![0.0; 3]).unwrap();
        let bw = BandwidthMatrix::from_diag(vec![0.5, 1.0, 2.0]).unwrap();
        let base: Vec<SummaryVector<f64>> =
            samples.iter().map(|s| SummaryVector::new(s.clone()).unwrap()).collect();
        let mut duplicated = Vec::new();
        for _ in 0..copies {
            duplicated.extend(base.iter().cloned());
        }
        let a = kde_log_likelihood(&target, &base, &bw, &cfg).unwrap();
        let b = kde_log_likelihood(&target, &duplicated, &bw, &cfg).unwrap();
        prop_assert!((a.log_value - b.log_value).abs() < 1e-10);
    }

    #[test]
    fn silverman_is_permutation_invariant(
        samples in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 3..12),
        seed in any::<u64>(),
    ) {
        let base: Vec<SummaryVector<f64>> =
            samples.iter().map(|s| SummaryVector::new(s.clone()).unwrap()).collect();
        let mut shuffled = base.clone();
        // deterministic Fisher-Yates from the seed
        let mut state = seed | 1;
        for i in (1..shuffled.len()).rev() {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let j = (state >> 33) as usize % (i + 1);
            shuffled.swap(i, j);
        }
        let a = silverman_bandwidth(&base).unwrap();
        let b = silverman_bandwidth(&shuffled).unwrap();
        for (x, y) in a.diag().iter().zip(b.diag()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300));
        }
    }

    #[test]
    fn gain_sequences_decrease(
        a in finite(1e-3..1e3),
        big_a in 0u64..10_000,
        c in finite(1e-3..1e3),
        k in 1u64..100_000,
    ) {
        let s = GainSchedule::new(vec![a], big_a, 1.0, c, 1.0 / 6.0).unwrap();
        let (a1, c1) = s.at(k).unwrap();
        let (a2, c2) = s.at(k + 1).unwrap();
        prop_assert!(a2[0] < a1[0]);
        prop_assert!(c2 < c1);
    }

    #[test]
    fn quantile_is_monotone(
        values in prop::collection::vec(finite(-1e6..1e6), 1..40),
        b1 in 0.0..1.0f64,
        b2 in 0.0..1.0f64,
    ) {
        let (lo, hi) = if b1 <= b2 { (b1, b2) } else { (b2, b1) };
        prop_assert!(quantile(&values, lo).unwrap() <= quantile(&values, hi).unwrap());
    }

    #[test]
    fn basic_ci_is_affine_equivariant(
        reps in prop::collection::vec(finite(-100.0..100.0), 4..30),
        theta in finite(-100.0..100.0),
        scale in finite(0.01..50.0),
        shift in finite(-100.0..100.0),
    ) {
        let base = basic_ci(theta, &reps, 0.9, false).unwrap();
        let moved: Vec<f64> = reps.iter().map(|r| scale * r + shift).collect();
        let mapped = basic_ci(scale * theta + shift, &moved, 0.9, false).unwrap();
        let tol = 1e-9 * (1.0 + base.lower.abs().max(base.upper.abs())) * scale.max(1.0);
        prop_assert!((mapped.lower - (scale * base.lower + shift)).abs() < tol);
        prop_assert!((mapped.upper - (scale * base.upper + shift)).abs() < tol);
        prop_assert!(mapped.lower <= mapped.upper + tol);
    }

    #[test]
    fn student_t_symmetry(t in -50.0..50.0f64, df in finite(0.1..500.0)) {
        let s = student_t_cdf(t, df).unwrap() + student_t_cdf(-t, df).unwrap();
        prop_assert!((s - 1.0).abs() < 1e-9);
    }

    #[test]
    fn updates_keep_the_next_perturbation_feasible(
        seed in any::<u64>(),
        c_next in finite(1e-4..0.2),
        log_gap in finite(-10.0..10.0),
    ) {
        let space = ParameterSpace::new(vec![0.0, -1.0], vec![1.0, 3.0]).unwrap();
        let key = StreamKey::from_seed(seed);
        let mut rng = key.rng();
        let theta = space.sample_uniform(&mut rng);
        let delta = Perturbation::<f64>::sample(2, &mut rng);
        let grad = gradient_estimate(&delta, log_gap, 0.0, c_next).unwrap();
        let next = update_iterate(&theta, &grad, &[0.3, 0.7], &space, c_next, &delta);
        for i in 0..2 {
            let lo = space.lower()[i];
            let hi = space.upper()[i];
            if lo + c_next <= hi - c_next {
                prop_assert!(next[i] + c_next <= hi && next[i] - c_next >= lo);
            }
        }
    }
}
