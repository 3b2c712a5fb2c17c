//! Multivariate kernel density estimation of the summary-statistic
//! likelihood.
//!
//! The density estimate uses a modified Gaussian kernel whose tail decays as
//! `exp(-sqrt(q)/2)` instead of `exp(-q/2)`, which keeps gradient
//! information alive far from the bulk of the simulated summaries. The
//! kernel is unnormalized (proportionality constant fixed to 1), so every
//! log density reported here carries a fixed additive constant that depends
//! only on the summary dimension `d`; values with equal `d` are directly
//! comparable and all downstream uses difference two such values.
//!
//! Bandwidths are diagonal, selected per coordinate by a multivariate
//! normal-reference (Silverman-type) rule and optionally smoothed with a
//! moving average over the per-iteration estimates. Densities that fall
//! below a configurable "numerically zero" threshold are replaced by a
//! nearest-neighbor estimate built from the closest simulated summary.

use serde::{Deserialize, Serialize};

use crate::error::{AmlError, Result};
use crate::scalar::Scalar;

/// A `d`-dimensional vector of summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryVector<F>(Vec<F>);

impl<F: Scalar> SummaryVector<F> {
    /// Wraps the raw values; every entry must be finite.
    pub fn new(values: Vec<F>) -> Result<Self> {
        if values.is_empty() {
            return Err(AmlError::EmptyInput("summary vector"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(AmlError::Domain(
                "summary vector contains a non-finite entry".into(),
            ));
        }
        Ok(SummaryVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn values(&self) -> &[F] {
        &self.0
    }
}

/// Diagonal squared-bandwidth matrix `H` (entries are `h_i^2`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthMatrix<F> {
    diag: Vec<F>,
}

impl<F: Scalar> BandwidthMatrix<F> {
    /// Builds the matrix from its diagonal; entries must be strictly
    /// positive and finite.
    pub fn from_diag(diag: Vec<F>) -> Result<Self> {
        if diag.is_empty() {
            return Err(AmlError::EmptyInput("bandwidth diagonal"));
        }
        if diag.iter().any(|h| !h.is_finite() || *h <= F::zero()) {
            return Err(AmlError::Domain(
                "bandwidth diagonal must be strictly positive".into(),
            ));
        }
        Ok(BandwidthMatrix { diag })
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    pub fn diag(&self) -> &[F] {
        &self.diag
    }

    /// `ln det(H)`, computed as a sum of logs for stability.
    pub fn log_det(&self) -> F {
        self.diag.iter().map(|h| h.ln()).sum()
    }
}

/// Configuration of the density estimator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KdeConfig<F> {
    /// Moving-average window over per-iteration bandwidth estimates.
    pub smoothing_window: usize,
    /// Densities below this value count as numerically zero and trigger the
    /// nearest-neighbor fallback.
    pub zero_threshold: F,
}

impl<F: Scalar> KdeConfig<F> {
    pub fn new(smoothing_window: usize, zero_threshold: F) -> Result<Self> {
        if smoothing_window == 0 {
            return Err(AmlError::InvalidParameter(
                "smoothing_window must be at least 1".into(),
            ));
        }
        let cap = F::min_positive_value() * F::from_f64(1e6);
        if zero_threshold <= F::zero() || zero_threshold > cap {
            return Err(AmlError::InvalidParameter(format!(
                "zero_threshold must lie in (0, {cap}]"
            )));
        }
        Ok(KdeConfig {
            smoothing_window,
            zero_threshold,
        })
    }
}

impl<F: Scalar> Default for KdeConfig<F> {
    /// Window 10; zero threshold = smallest positive normal value times 1e3.
    fn default() -> Self {
        KdeConfig {
            smoothing_window: 10,
            zero_threshold: F::min_positive_value() * F::from_f64(1e3),
        }
    }
}

/// A kernel-density likelihood estimate.
///
/// `log_value` is the natural log of the estimated density, up to the fixed
/// additive constant per dimension discussed in the module docs. It is
/// finite whenever at least one summary point was supplied: the
/// nearest-neighbor fallback evaluates in log space and cannot underflow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodEstimate<F> {
    pub log_value: F,
    /// Number of summary points the estimate was computed from.
    pub n_points: usize,
    /// True when the nearest-neighbor fallback was used.
    pub degenerate: bool,
}

/// Modified Gaussian kernel evaluated at the whitened squared distance
/// `q = x' H^-1 x`.
///
/// Returns `exp(-q/2)` for `q < 1` and `exp(-sqrt(q)/2)` otherwise; both
/// branches equal `exp(-1/2)` at `q = 1`. Unnormalized.
pub fn modified_gaussian_kernel<F: Scalar>(q: F) -> Result<F> {
    if !(q >= F::zero()) {
        return Err(AmlError::Domain(format!(
            "kernel argument must be nonnegative, got {q}"
        )));
    }
    Ok(kernel_log(q).exp())
}

// Log of the kernel; always finite for finite q.
#[inline]
fn kernel_log<F: Scalar>(q: F) -> F {
    let half = F::from_f64(0.5);
    if q < F::one() {
        -half * q
    } else {
        -half * q.sqrt()
    }
}

// Whitened squared distance between `target` and `sample` under diagonal H.
fn whitened_sq_dist<F: Scalar>(target: &[F], sample: &[F], h_diag: &[F]) -> F {
    target
        .iter()
        .zip(sample)
        .zip(h_diag)
        .map(|((t, s), h)| {
            let d = *t - *s;
            d * d / *h
        })
        .sum()
}

/// Per-coordinate normal-reference bandwidth rule on a set of summaries.
///
/// `diag[i] = (sd_i * (4/(d+2))^(1/(d+4)) * n^(-1/(d+4)))^2` with `sd_i` the
/// sample standard deviation of coordinate `i`. Coordinates with (near-)zero
/// spread are floored at `max(1e-8, 1e-8 * |mean_i|)` so the matrix stays
/// positive definite.
pub fn silverman_bandwidth<F: Scalar>(samples: &[SummaryVector<F>]) -> Result<BandwidthMatrix<F>> {
    let n = samples.len();
    if n < 2 {
        return Err(AmlError::InsufficientData {
            context: "silverman bandwidth",
            min: 2,
            got: n,
        });
    }
    let d = samples[0].dim();
    for s in samples {
        if s.dim() != d {
            return Err(AmlError::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
    }

    let n_f = F::from_f64(n as f64);
    let d_f = F::from_f64(d as f64);
    let four = F::from_f64(4.0);
    let two = F::from_f64(2.0);
    let exponent = (d_f + four).recip();
    let factor = (four / (d_f + two)).powf(exponent) * n_f.powf(-exponent);

    let eps = F::from_f64(1e-8);
    let mut diag = Vec::with_capacity(d);
    for i in 0..d {
        let mean = samples.iter().map(|s| s.values()[i]).sum::<F>() / n_f;
        let ss = samples
            .iter()
            .map(|s| {
                let d = s.values()[i] - mean;
                d * d
            })
            .sum::<F>();
        let sd = (ss / (n_f - F::one())).sqrt();
        let floor = eps.max(eps * mean.abs());
        let h = sd.max(floor) * factor;
        diag.push(h * h);
    }
    BandwidthMatrix::from_diag(diag)
}

/// Elementwise arithmetic mean of the last `min(window, len)` bandwidth
/// matrices.
pub fn smooth_bandwidth<F: Scalar>(
    history: &[BandwidthMatrix<F>],
    window: usize,
) -> Result<BandwidthMatrix<F>> {
    if history.is_empty() {
        return Err(AmlError::EmptyInput("bandwidth history"));
    }
    if window == 0 {
        return Err(AmlError::InvalidParameter("window must be at least 1".into()));
    }
    let d = history[0].dim();
    let tail = &history[history.len().saturating_sub(window)..];
    let mut diag = vec![F::zero(); d];
    for m in tail {
        if m.dim() != d {
            return Err(AmlError::DimensionMismatch {
                expected: d,
                got: m.dim(),
            });
        }
        for (acc, h) in diag.iter_mut().zip(m.diag()) {
            *acc = *acc + *h;
        }
    }
    let len = F::from_f64(tail.len() as f64);
    for h in &mut diag {
        *h = *h / len;
    }
    BandwidthMatrix::from_diag(diag)
}

/// Rolling container for per-iteration bandwidth estimates.
#[derive(Debug, Clone)]
pub struct BandwidthHistory<F> {
    history: Vec<BandwidthMatrix<F>>,
    window: usize,
}

impl<F: Scalar> BandwidthHistory<F> {
    pub fn new(window: usize) -> Self {
        BandwidthHistory {
            history: Vec::new(),
            window: window.max(1),
        }
    }

    pub fn push(&mut self, bw: BandwidthMatrix<F>) {
        // Only the last `window` entries matter; drop older ones.
        if self.history.len() == 2 * self.window {
            self.history.drain(..self.window);
        }
        self.history.push(bw);
    }

    /// Moving-average bandwidth over the retained history.
    pub fn smoothed(&self) -> Result<BandwidthMatrix<F>> {
        smooth_bandwidth(&self.history, self.window)
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }
}

/// Kernel density log-likelihood of `target` under the summaries `samples`.
///
/// Computes `density = sum_j kernel(q_j) / (n * sqrt(det H))`. When the
/// density falls below `cfg.zero_threshold` the nearest-neighbor fallback is
/// returned instead (with `degenerate = true`), so the log value is always
/// finite.
pub fn kde_log_likelihood<F: Scalar>(
    target: &SummaryVector<F>,
    samples: &[SummaryVector<F>],
    bandwidth: &BandwidthMatrix<F>,
    cfg: &KdeConfig<F>,
) -> Result<LikelihoodEstimate<F>> {
    if samples.is_empty() {
        return Err(AmlError::EmptyInput("kde samples"));
    }
    let d = target.dim();
    if bandwidth.dim() != d {
        return Err(AmlError::DimensionMismatch {
            expected: d,
            got: bandwidth.dim(),
        });
    }
    for s in samples {
        if s.dim() != d {
            return Err(AmlError::DimensionMismatch {
                expected: d,
                got: s.dim(),
            });
        }
    }

    let n = samples.len();
    let n_f = F::from_f64(n as f64);
    let log_det = bandwidth.log_det();
    let half = F::from_f64(0.5);

    let kernel_sum = samples
        .iter()
        .map(|s| kernel_log(whitened_sq_dist(target.values(), s.values(), bandwidth.diag())).exp())
        .sum::<F>();
    let density = kernel_sum / n_f * (-half * log_det).exp();

    if density < cfg.zero_threshold {
        return nearest_neighbor_fallback(target, samples, bandwidth);
    }

    Ok(LikelihoodEstimate {
        log_value: kernel_sum.ln() - n_f.ln() - half * log_det,
        n_points: n,
        degenerate: false,
    })
}

/// Nearest-neighbor replacement for a numerically zero density.
///
/// Selects the sample closest to `target` in the raw Euclidean norm (ties
/// break toward the lowest index) and re-evaluates the density formula with
/// that sample as the only observation. Evaluated in log space, so the
/// result is finite for any finite inputs.
pub fn nearest_neighbor_fallback<F: Scalar>(
    target: &SummaryVector<F>,
    samples: &[SummaryVector<F>],
    bandwidth: &BandwidthMatrix<F>,
) -> Result<LikelihoodEstimate<F>> {
    if samples.is_empty() {
        return Err(AmlError::EmptyInput("fallback samples"));
    }
    let mut best = 0usize;
    let mut best_dist = F::infinity();
    for (j, s) in samples.iter().enumerate() {
        let dist = target
            .values()
            .iter()
            .zip(s.values())
            .map(|(t, x)| {
                let d = *t - *x;
                d * d
            })
            .sum::<F>();
        if dist < best_dist {
            best = j;
            best_dist = dist;
        }
    }
    let half = F::from_f64(0.5);
    let q = whitened_sq_dist(
        target.values(),
        samples[best].values(),
        bandwidth.diag(),
    );
    Ok(LikelihoodEstimate {
        log_value: kernel_log(q) - half * bandwidth.log_det(),
        n_points: 1,
        degenerate: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sv(values: &[f64]) -> SummaryVector<f64> {
        SummaryVector::new(values.to_vec()).unwrap()
    }

    fn bw(diag: &[f64]) -> BandwidthMatrix<f64> {
        BandwidthMatrix::from_diag(diag.to_vec()).unwrap()
    }

    #[test]
    fn kernel_values() {
        assert_eq!(modified_gaussian_kernel(0.0).unwrap(), 1.0);
        assert_relative_eq!(
            modified_gaussian_kernel(1.0).unwrap(),
            0.6065306597126334,
            max_relative = 1e-15
        );
        // q = 4 lies on the outer branch: exp(-sqrt(4)/2) = exp(-1).
        assert_relative_eq!(
            modified_gaussian_kernel(4.0).unwrap(),
            0.36787944117144233,
            max_relative = 1e-15
        );
        assert!(modified_gaussian_kernel(-1e-9).is_err());
    }

    #[test]
    fn kernel_monotone_and_continuous() {
        let grid: Vec<f64> = (0..2000).map(|i| i as f64 * 0.01).collect();
        for w in grid.windows(2) {
            assert!(
                modified_gaussian_kernel(w[0]).unwrap() > modified_gaussian_kernel(w[1]).unwrap()
            );
        }
        for eps in [1e-3f64, 1e-6, 1e-9] {
            let gap = (modified_gaussian_kernel(1.0 - eps).unwrap()
                - modified_gaussian_kernel(1.0 + eps).unwrap())
            .abs();
            assert!(gap < eps, "gap {gap} at eps {eps}");
        }
    }

    #[test]
    fn kernel_tail_heavier_than_gaussian() {
        for q in [1.0001f64, 2.0, 10.0, 100.0, 1e4] {
            assert!(modified_gaussian_kernel(q).unwrap() > (-0.5 * q).exp());
        }
    }

    #[test]
    fn silverman_matches_direct_rule() {
        // 100 points at +-sqrt(99/100) have sample sd exactly 1.
        let x = (99.0f64 / 100.0).sqrt();
        let mut samples: Vec<_> = (0..50).map(|_| sv(&[x])).collect();
        samples.extend((0..50).map(|_| sv(&[-x])));
        let h2 = silverman_bandwidth(&samples).unwrap().diag()[0];
        assert_relative_eq!(h2, 0.17781790722643995, max_relative = 1e-12);
        // Within 30% of the textbook 1.06 * sd * n^(-1/5) rule.
        let textbook = 1.06f64 * 100f64.powf(-0.2);
        assert!((h2.sqrt() - textbook).abs() / textbook < 0.30);

        // Same construction at n = 1000.
        let x = (999.0f64 / 1000.0).sqrt();
        let mut samples: Vec<_> = (0..500).map(|_| sv(&[x])).collect();
        samples.extend((0..500).map(|_| sv(&[-x])));
        let h2 = silverman_bandwidth(&samples).unwrap().diag()[0];
        assert_relative_eq!(h2, 0.0707905839196623, max_relative = 1e-12);
    }

    #[test]
    fn silverman_degenerate_coordinate_floored() {
        let samples: Vec<_> = (0..10).map(|_| sv(&[3.0, 7.0])).collect();
        let bw = silverman_bandwidth(&samples).unwrap();
        assert!(bw.diag().iter().all(|h| *h > 0.0));
    }

    #[test]
    fn silverman_scaling_and_errors() {
        let samples = vec![sv(&[0.0, 1.0]), sv(&[1.0, 3.0]), sv(&[2.0, -1.0])];
        let scaled: Vec<_> = samples
            .iter()
            .map(|s| sv(&[s.values()[0] * 5.0, s.values()[1]]))
            .collect();
        let base = silverman_bandwidth(&samples).unwrap();
        let big = silverman_bandwidth(&scaled).unwrap();
        assert_relative_eq!(big.diag()[0], base.diag()[0] * 25.0, max_relative = 1e-12);
        assert_relative_eq!(big.diag()[1], base.diag()[1], max_relative = 1e-12);

        assert!(silverman_bandwidth(&samples[..1]).is_err());
    }

    #[test]
    fn smoothing_takes_tail_mean() {
        let h = |v: f64| bw(&[v]);
        assert_eq!(smooth_bandwidth(&[h(2.0)], 5).unwrap().diag()[0], 2.0);
        assert_eq!(
            smooth_bandwidth(&[h(1.0), h(3.0)], 2).unwrap().diag()[0],
            2.0
        );
        assert_eq!(
            smooth_bandwidth(&[h(1.0), h(3.0), h(5.0)], 2).unwrap().diag()[0],
            4.0
        );
        assert!(smooth_bandwidth::<f64>(&[], 3).is_err());
    }

    #[test]
    fn history_window_matches_smooth_bandwidth() {
        let mut hist = BandwidthHistory::new(3);
        let mut raw = Vec::new();
        for v in [1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0] {
            hist.push(bw(&[v]));
            raw.push(bw(&[v]));
            assert_eq!(
                hist.smoothed().unwrap(),
                smooth_bandwidth(&raw, 3).unwrap()
            );
        }
    }

    #[test]
    fn kde_single_sample_at_target() {
        let cfg = KdeConfig::default();
        let t = sv(&[0.5, -2.0]);
        let est = kde_log_likelihood(&t, &[t.clone()], &bw(&[1.0, 1.0]), &cfg).unwrap();
        assert_eq!(est.log_value, 0.0);
        assert!(!est.degenerate);
        assert_eq!(est.n_points, 1);

        let est2 = kde_log_likelihood(&t, &[t.clone(), t.clone()], &bw(&[1.0, 1.0]), &cfg).unwrap();
        assert_relative_eq!(est2.log_value, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kde_outer_branch_hand_value() {
        let cfg = KdeConfig::default();
        let est = kde_log_likelihood(&sv(&[0.0]), &[sv(&[2.0])], &bw(&[1.0]), &cfg).unwrap();
        // q = 4 -> exp(-1)
        assert_relative_eq!(est.log_value.exp(), 0.36787944117144233, max_relative = 1e-14);
    }

    #[test]
    fn kde_duplication_invariance() {
        let cfg = KdeConfig::default();
        let t = sv(&[0.3, 0.1]);
        let samples = vec![sv(&[1.0, 0.0]), sv(&[-0.5, 2.0]), sv(&[0.0, 0.0])];
        let h = bw(&[0.7, 1.3]);
        let base = kde_log_likelihood(&t, &samples, &h, &cfg).unwrap();
        let mut tripled = samples.clone();
        tripled.extend(samples.clone());
        tripled.extend(samples.clone());
        let dup = kde_log_likelihood(&t, &tripled, &h, &cfg).unwrap();
        assert_relative_eq!(base.log_value, dup.log_value, epsilon = 1e-12);
    }

    #[test]
    fn kde_translation_invariance() {
        let cfg = KdeConfig::default();
        let shift = [13.25, -7.5];
        let t = sv(&[0.3, 0.1]);
        let samples = vec![sv(&[1.0, 0.0]), sv(&[-0.5, 2.0])];
        let h = bw(&[0.7, 1.3]);
        let base = kde_log_likelihood(&t, &samples, &h, &cfg).unwrap();
        let t2 = sv(&[0.3 + shift[0], 0.1 + shift[1]]);
        let moved: Vec<_> = samples
            .iter()
            .map(|s| sv(&[s.values()[0] + shift[0], s.values()[1] + shift[1]]))
            .collect();
        let shifted = kde_log_likelihood(&t2, &moved, &h, &cfg).unwrap();
        assert_relative_eq!(base.log_value, shifted.log_value, epsilon = 1e-12);
    }

    #[test]
    fn kde_det_scaling_at_center() {
        let cfg = KdeConfig::default();
        let t = sv(&[1.0, 2.0, 3.0]);
        let samples = vec![t.clone(), t.clone(), t.clone()];
        let s2 = 4.0;
        let base = kde_log_likelihood(&t, &samples, &bw(&[0.5, 0.8, 1.1]), &cfg).unwrap();
        let scaled = kde_log_likelihood(
            &t,
            &samples,
            &bw(&[0.5 * s2, 0.8 * s2, 1.1 * s2]),
            &cfg,
        )
        .unwrap();
        // d = 3, s = 2: density shrinks by s^-3.
        assert_relative_eq!(
            scaled.log_value,
            base.log_value - 3.0 * 2.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn kde_dimension_mismatch() {
        let cfg = KdeConfig::default();
        assert!(kde_log_likelihood(&sv(&[0.0]), &[sv(&[0.0, 1.0])], &bw(&[1.0]), &cfg).is_err());
        assert!(kde_log_likelihood(&sv(&[0.0]), &[sv(&[0.0])], &bw(&[1.0, 1.0]), &cfg).is_err());
    }

    #[test]
    fn fallback_picks_raw_euclidean_argmin() {
        let t = sv(&[0.0]);
        let samples = vec![sv(&[5.0]), sv(&[3.0]), sv(&[-4.0])];
        let est = nearest_neighbor_fallback(&t, &samples, &bw(&[1.0])).unwrap();
        assert_relative_eq!(est.log_value.exp(), (-1.5f64).exp(), max_relative = 1e-14);
        assert!(est.degenerate);
        assert_eq!(est.n_points, 1);

        let exact = nearest_neighbor_fallback(&t, &[t.clone(), sv(&[100.0])], &bw(&[4.0])).unwrap();
        assert_relative_eq!(exact.log_value, -0.5 * 4.0f64.ln(), epsilon = 1e-14);
    }

    #[test]
    fn fallback_tie_breaks_to_lowest_index() {
        // Both samples are at raw distance 3; whitening separates them, so
        // the returned value reveals which one won the argmin.
        let t = sv(&[0.0, 0.0]);
        let samples = vec![sv(&[3.0, 0.0]), sv(&[0.0, 3.0])];
        let h = bw(&[1.0, 100.0]);
        let est = nearest_neighbor_fallback(&t, &samples, &h).unwrap();
        // index 0: q = 9 -> log kernel = -1.5
        assert_relative_eq!(
            est.log_value,
            -1.5 - 0.5 * 100.0f64.ln(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn fallback_triggers_exactly_below_threshold() {
        let cfg = KdeConfig::<f64>::default();
        let h = bw(&[1.0]);
        // The density of one sample at distance x is exp(-x/2), which
        // crosses the default threshold near x = 1402.7.
        for x in [1390.0f64, 1410.0] {
            let density = (-0.5 * x).exp();
            let est = kde_log_likelihood(&sv(&[0.0]), &[sv(&[x])], &h, &cfg).unwrap();
            assert_eq!(est.degenerate, density < cfg.zero_threshold);
            assert!(est.log_value.is_finite());
            assert_relative_eq!(est.log_value, -0.5 * x, max_relative = 1e-12);
        }
    }

    #[test]
    fn config_validation() {
        assert!(KdeConfig::new(0, 1e-305).is_err());
        assert!(KdeConfig::new(5, 0.0).is_err());
        assert!(KdeConfig::new(5, 1.0).is_err());
        assert!(KdeConfig::new(5, 1e-305).is_ok());
    }

    #[test]
    fn works_at_f32() {
        let t = SummaryVector::<f32>::new(vec![0.0]).unwrap();
        let s = SummaryVector::<f32>::new(vec![2.0]).unwrap();
        let h = BandwidthMatrix::from_diag(vec![1.0f32]).unwrap();
        let est = kde_log_likelihood(&t, &[s], &h, &KdeConfig::default()).unwrap();
        assert!((est.log_value + 1.0).abs() < 1e-6);
    }
}
