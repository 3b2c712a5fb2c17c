//! Quantitative checks of the simulate → summarize → density pipeline on
//! the normal model, against oracles that do not share code with the
//! estimator: a radial quadrature of the kernel for the expected density,
//! and the analytic argmax of the summary likelihood.

use aml::estimator::estimate_log_likelihood;
use aml::kde::{kde_log_likelihood, BandwidthMatrix, KdeConfig, SummaryVector};
use aml::models::{NormalModel, NormalSummarySet, SimulatorModel};
use aml::StreamKey;

const DIM: usize = 10;

/// chi-square density with `DIM` degrees of freedom (normalization for
/// d = 10: 2^5 * Gamma(5) = 768).
fn chi2_pdf_10(u: f64) -> f64 {
    if u <= 0.0 {
        return 0.0;
    }
    u.powi(4) * (-0.5 * u).exp() / 768.0
}

fn kernel(q: f64) -> f64 {
    if q < 1.0 {
        (-0.5 * q).exp()
    } else {
        (-0.5 * q.sqrt()).exp()
    }
}

/// Simpson quadrature of `f` on `[a, b]`.
fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

/// The expected kernel density at the data-generating mean: summaries are
/// one draw each from `N(theta, I)`, so the whitened squared distance is a
/// scaled chi-square and the expectation reduces to a one-dimensional
/// integral.
#[test]
fn kde_density_matches_quadrature_oracle() {
    let model = NormalModel::<f64>::new(1, NormalSummarySet::Plain).unwrap();
    let theta = vec![5.0; DIM];
    let target = SummaryVector::new(theta.clone()).unwrap();
    let h2 = 0.64f64; // fixed squared bandwidth 0.8^2 per coordinate
    let bandwidth = BandwidthMatrix::from_diag(vec![h2; DIM]).unwrap();
    let cfg = KdeConfig::default();

    let oracle = simpson(|u| kernel(u / h2) * chi2_pdf_10(u), 0.0, 400.0, 8000)
        / h2.powi(DIM as i32 / 2);

    let reps = 400usize;
    let n = 100usize;
    let key = StreamKey::from_seed(20_240_601);
    let mut densities = Vec::with_capacity(reps);
    for r in 0..reps {
        let rep_key = key.child(r as u64);
        let samples: Vec<SummaryVector<f64>> = (0..n)
            .map(|j| {
                let mut rng = rep_key.child(j as u64).rng();
                let data = model.simulate(&theta, &mut rng).unwrap();
                model.summarize(&data).unwrap()
            })
            .collect();
        let est = kde_log_likelihood(&target, &samples, &bandwidth, &cfg).unwrap();
        densities.push(est.log_value.exp());
    }
    let mean = densities.iter().sum::<f64>() / reps as f64;
    let var = densities
        .iter()
        .map(|d| (d - mean) * (d - mean))
        .sum::<f64>()
        / (reps - 1) as f64;
    let se = (var / reps as f64).sqrt();
    assert!(
        (mean - oracle).abs() < 3.0 * se,
        "mean density {mean:e}, oracle {oracle:e}, se {se:e}"
    );
    // and the Monte Carlo noise is small enough for the check to bite
    assert!(se < 0.05 * oracle);
}

/// The summary likelihood is a radially decreasing function of
/// `theta - observed` (a symmetric kernel smoothed over a spherical
/// Gaussian), so its estimate must decrease along rays from the observed
/// summaries.
#[test]
fn estimate_log_likelihood_peaks_at_the_observed_summaries() {
    let model = NormalModel::<f64>::new(1, NormalSummarySet::Plain).unwrap();
    let observed_theta = vec![5.0; DIM];
    let observed = SummaryVector::new(observed_theta.clone()).unwrap();
    let cfg = KdeConfig::default();

    let offsets = [0.3f64, 0.6];
    let reps = 400usize;
    let key = StreamKey::from_seed(777);

    let mut gaps = Vec::new();
    for step in offsets {
        let shifted: Vec<f64> = observed_theta.iter().map(|t| t + step).collect();
        let mut diffs = Vec::with_capacity(reps);
        for r in 0..reps {
            let rep = key.child(r as u64);
            let at_obs = estimate_log_likelihood(
                &observed_theta,
                &model,
                &observed,
                100,
                None,
                None,
                &cfg,
                rep.child(0),
            )
            .unwrap();
            let at_shift = estimate_log_likelihood(
                &shifted,
                &model,
                &observed,
                100,
                None,
                None,
                &cfg,
                rep.child(1),
            )
            .unwrap();
            diffs.push(at_obs.log_value - at_shift.log_value);
        }
        let mean = diffs.iter().sum::<f64>() / reps as f64;
        let var = diffs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (reps - 1) as f64;
        let se = (var / reps as f64).sqrt();
        assert!(mean > 5.0 * se, "offset {step}: gap {mean} (se {se})");
        gaps.push((mean, se));
    }
    // a larger offset loses more likelihood
    let (small, small_se) = gaps[0];
    let (large, large_se) = gaps[1];
    assert!(large - small > 3.0 * small_se.hypot(large_se));
}
