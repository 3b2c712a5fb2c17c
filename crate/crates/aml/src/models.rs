//! Data-generating processes and their summary statistics.
//!
//! A [`SimulatorModel`] couples a parameter box with a stochastic simulator
//! and a summary map; the estimator only ever sees summaries. Two built-in
//! models are provided: a 10-dimensional normal location model (with a plain
//! and a transformed summary set) and the M/G/1 queue observed through
//! interdeparture times.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmlError, Result};
use crate::kde::SummaryVector;
use crate::scalar::Scalar;
use crate::spsa::ParameterSpace;

/// A simulated or observed dataset: a flat row-major value buffer plus its
/// shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset<F> {
    values: Vec<F>,
    rows: usize,
    cols: usize,
}

impl<F: Scalar> Dataset<F> {
    pub fn new(values: Vec<F>, rows: usize, cols: usize) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(AmlError::DimensionMismatch {
                expected: rows * cols,
                got: values.len(),
            });
        }
        Ok(Dataset { values, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }
}

/// A stochastic model the estimator can simulate from.
///
/// `simulate` must be a deterministic function of the RNG stream state, and
/// `summarize` a pure function with a fixed output dimension.
pub trait SimulatorModel<F: Scalar>: Sync {
    /// Parameter dimension `p`.
    fn parameter_dim(&self) -> usize;

    /// Summary dimension `d`.
    fn summary_dim(&self) -> usize;

    /// The search box.
    fn space(&self) -> &ParameterSpace<F>;

    /// Draws one dataset of the model's observed size at `theta`.
    fn simulate(&self, theta: &[F], rng: &mut ChaCha8Rng) -> Result<Dataset<F>>;

    /// Reduces a dataset to its summary statistics.
    fn summarize(&self, data: &Dataset<F>) -> Result<SummaryVector<F>>;

    /// Marks coordinates that may not be negative (used when reporting
    /// bootstrap intervals). Defaults to `lower >= 0`.
    fn nonnegative_coordinates(&self) -> Vec<bool> {
        self.space()
            .lower()
            .iter()
            .map(|lo| *lo >= F::zero())
            .collect()
    }
}

/// A prior density for MAP estimation.
pub trait Prior<F: Scalar>: Sync {
    /// Log density at `theta`; `-inf` outside the support.
    fn log_density(&self, theta: &[F]) -> F;
}

/// Flat prior over a box; MAP under this prior coincides with maximum
/// likelihood on the box.
#[derive(Debug, Clone)]
pub struct UniformPrior<F> {
    space: ParameterSpace<F>,
    log_norm: F,
}

impl<F: Scalar> UniformPrior<F> {
    pub fn new(space: ParameterSpace<F>) -> Self {
        let log_norm = (0..space.dim())
            .map(|i| space.range(i).ln())
            .sum::<F>();
        UniformPrior { space, log_norm }
    }
}

impl<F: Scalar> Prior<F> for UniformPrior<F> {
    fn log_density(&self, theta: &[F]) -> F {
        if self.space.contains(theta) {
            -self.log_norm
        } else {
            F::neg_infinity()
        }
    }
}

/// Builds the flat prior over `space`.
pub fn prior_uniform<F: Scalar>(space: &ParameterSpace<F>) -> UniformPrior<F> {
    UniformPrior::new(space.clone())
}

/// Which summary set the normal model reports.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormalSummarySet {
    /// The 10 coordinate means.
    Plain,
    /// The 10 transformed statistics of [`normal_summarize_transformed`].
    Transformed,
}

/// 10-dimensional normal location model with identity covariance.
#[derive(Debug, Clone)]
pub struct NormalModel<F> {
    space: ParameterSpace<F>,
    sample_size: usize,
    summary_set: NormalSummarySet,
}

pub const NORMAL_DIM: usize = 10;

impl<F: Scalar> NormalModel<F> {
    /// Search box `(-100, 100)^10`, one observation per dataset, plain
    /// summaries.
    pub fn new(sample_size: usize, summary_set: NormalSummarySet) -> Result<Self> {
        let space = ParameterSpace::new(
            vec![F::from_f64(-100.0); NORMAL_DIM],
            vec![F::from_f64(100.0); NORMAL_DIM],
        )?;
        Self::with_space(space, sample_size, summary_set)
    }

    pub fn with_space(
        space: ParameterSpace<F>,
        sample_size: usize,
        summary_set: NormalSummarySet,
    ) -> Result<Self> {
        if space.dim() != NORMAL_DIM {
            return Err(AmlError::DimensionMismatch {
                expected: NORMAL_DIM,
                got: space.dim(),
            });
        }
        if sample_size == 0 {
            return Err(AmlError::InvalidParameter(
                "sample_size must be at least 1".into(),
            ));
        }
        Ok(NormalModel {
            space,
            sample_size,
            summary_set,
        })
    }

    pub fn sample_size(&self) -> usize {
        self.sample_size
    }

    pub fn summary_set(&self) -> NormalSummarySet {
        self.summary_set
    }
}

/// Draws `sample_size` i.i.d. observations from `N(theta, I)`.
pub fn normal_simulate<F: Scalar>(
    theta: &[F],
    sample_size: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset<F>> {
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(AmlError::Domain("normal mean must be finite".into()));
    }
    let d = theta.len();
    let mut values = Vec::with_capacity(sample_size * d);
    for _ in 0..sample_size {
        for t in theta {
            values.push(*t + F::standard_normal(rng));
        }
    }
    Dataset::new(values, sample_size, d)
}

fn column_means<F: Scalar>(data: &Dataset<F>) -> Vec<F> {
    let n = F::from_f64(data.rows() as f64);
    let mut means = vec![F::zero(); data.cols()];
    for r in 0..data.rows() {
        for (m, v) in means.iter_mut().zip(data.row(r)) {
            *m = *m + *v;
        }
    }
    for m in &mut means {
        *m = *m / n;
    }
    means
}

/// The transformed summary set: sums, differences and one product of the
/// coordinate means, in fixed (column-major) reading order.
pub fn normal_summarize_transformed<F: Scalar>(xbar: &[F]) -> Result<Vec<F>> {
    if xbar.len() != NORMAL_DIM {
        return Err(AmlError::DimensionMismatch {
            expected: NORMAL_DIM,
            got: xbar.len(),
        });
    }
    Ok(vec![
        xbar[0],
        xbar[1] + xbar[2],
        xbar[1] - xbar[2],
        xbar[3] + xbar[4],
        xbar[4] + xbar[5],
        xbar[5] + xbar[3],
        xbar[6],
        xbar[6] + xbar[7],
        xbar[8],
        xbar[8] * xbar[9],
    ])
}

impl<F: Scalar> SimulatorModel<F> for NormalModel<F> {
    fn parameter_dim(&self) -> usize {
        NORMAL_DIM
    }

    fn summary_dim(&self) -> usize {
        NORMAL_DIM
    }

    fn space(&self) -> &ParameterSpace<F> {
        &self.space
    }

    fn simulate(&self, theta: &[F], rng: &mut ChaCha8Rng) -> Result<Dataset<F>> {
        if theta.len() != NORMAL_DIM {
            return Err(AmlError::DimensionMismatch {
                expected: NORMAL_DIM,
                got: theta.len(),
            });
        }
        normal_simulate(theta, self.sample_size, rng)
    }

    fn summarize(&self, data: &Dataset<F>) -> Result<SummaryVector<F>> {
        if data.cols() != NORMAL_DIM || data.rows() == 0 {
            return Err(AmlError::DimensionMismatch {
                expected: NORMAL_DIM,
                got: data.cols(),
            });
        }
        let xbar = column_means(data);
        match self.summary_set {
            NormalSummarySet::Plain => SummaryVector::new(xbar),
            NormalSummarySet::Transformed => {
                SummaryVector::new(normal_summarize_transformed(&xbar)?)
            }
        }
    }

    fn nonnegative_coordinates(&self) -> Vec<bool> {
        vec![false; NORMAL_DIM]
    }
}

/// Single-server first-come-first-serve queue with uniform service times on
/// `[theta1, theta1 + theta2]` and exponential interarrival times with rate
/// `theta3`; only interdeparture times are observed.
#[derive(Debug, Clone)]
pub struct Mg1Model<F> {
    space: ParameterSpace<F>,
    customers: usize,
}

impl<F: Scalar> Mg1Model<F> {
    /// Search box `(0, 10) x (0, 10) x (0.05, 10)`.
    pub fn new(customers: usize) -> Result<Self> {
        let space = ParameterSpace::new(
            vec![F::zero(), F::zero(), F::from_f64(0.05)],
            vec![F::from_f64(10.0); 3],
        )?;
        Self::with_space(space, customers)
    }

    pub fn with_space(space: ParameterSpace<F>, customers: usize) -> Result<Self> {
        if space.dim() != 3 {
            return Err(AmlError::DimensionMismatch {
                expected: 3,
                got: space.dim(),
            });
        }
        if customers < 4 {
            return Err(AmlError::InvalidParameter(
                "the queue needs at least 4 customers for quartile summaries".into(),
            ));
        }
        Ok(Mg1Model { space, customers })
    }

    pub fn customers(&self) -> usize {
        self.customers
    }
}

/// Interdeparture times from given service times `u` and interarrival times
/// `w`.
///
/// Customer `m` departs `u[m]` after service starts; service starts at the
/// later of their arrival and the previous departure:
/// `y[m] = u[m]` when `sum(w[..=m]) <= sum(y[..m])` (the server is still
/// busy when customer m arrives), and
/// `y[m] = u[m] + sum(w[..=m]) - sum(y[..m])` otherwise.
pub fn mg1_interdeparture_times<F: Scalar>(u: &[F], w: &[F]) -> Result<Vec<F>> {
    if u.len() != w.len() {
        return Err(AmlError::DimensionMismatch {
            expected: u.len(),
            got: w.len(),
        });
    }
    let mut y = Vec::with_capacity(u.len());
    let mut arrivals = F::zero(); // running sum of w
    let mut departures = F::zero(); // running sum of y
    for (um, wm) in u.iter().zip(w) {
        arrivals = arrivals + *wm;
        let ym = if arrivals <= departures {
            *um
        } else {
            *um + arrivals - departures
        };
        departures = departures + ym;
        y.push(ym);
    }
    Ok(y)
}

/// Simulates `customers` interdeparture times at
/// `theta = (theta1, theta2, theta3)`.
pub fn mg1_simulate<F: Scalar>(
    theta: &[F],
    customers: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Dataset<F>> {
    if theta.len() != 3 {
        return Err(AmlError::DimensionMismatch {
            expected: 3,
            got: theta.len(),
        });
    }
    let (t1, t2, t3) = (theta[0], theta[1], theta[2]);
    if !t1.is_finite() || !t2.is_finite() || !t3.is_finite() {
        return Err(AmlError::Domain("queue parameters must be finite".into()));
    }
    // theta2 = 0 is tolerated: the projected boundary can reach it and the
    // service time degenerates to the constant theta1.
    if t1 < F::zero() || t2 < F::zero() || t3 <= F::zero() {
        return Err(AmlError::InvalidParameter(format!(
            "invalid queue parameters ({t1}, {t2}, {t3})"
        )));
    }
    let mut u = Vec::with_capacity(customers);
    let mut w = Vec::with_capacity(customers);
    for _ in 0..customers {
        u.push(rng.random_range(t1..=t1 + t2));
        w.push(F::standard_exp(rng) / t3);
    }
    let y = mg1_interdeparture_times(&u, &w)?;
    Dataset::new(y, customers, 1)
}

/// `(min, Q1, median, Q3, max)` of the interdeparture times, with quartiles
/// by linear interpolation of order statistics.
pub fn mg1_summarize<F: Scalar>(y: &[F]) -> Result<Vec<F>> {
    if y.len() < 4 {
        return Err(AmlError::InsufficientData {
            context: "queue summaries",
            min: 4,
            got: y.len(),
        });
    }
    let mut sorted = y.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    Ok(vec![
        sorted[0],
        quantile_sorted(&sorted, F::from_f64(0.25)),
        quantile_sorted(&sorted, F::from_f64(0.5)),
        quantile_sorted(&sorted, F::from_f64(0.75)),
        sorted[sorted.len() - 1],
    ])
}

// Type-7 quantile of an already sorted slice; shared with the bootstrap
// module through `bootstrap::quantile`.
pub(crate) fn quantile_sorted<F: Scalar>(sorted: &[F], beta: F) -> F {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let h = F::from_f64((n - 1) as f64) * beta;
    let lo = h.floor();
    let idx = lo.to_f64() as usize;
    if idx + 1 >= n {
        return sorted[n - 1];
    }
    sorted[idx] + (h - lo) * (sorted[idx + 1] - sorted[idx])
}

impl<F: Scalar> SimulatorModel<F> for Mg1Model<F> {
    fn parameter_dim(&self) -> usize {
        3
    }

    fn summary_dim(&self) -> usize {
        5
    }

    fn space(&self) -> &ParameterSpace<F> {
        &self.space
    }

    fn simulate(&self, theta: &[F], rng: &mut ChaCha8Rng) -> Result<Dataset<F>> {
        mg1_simulate(theta, self.customers, rng)
    }

    fn summarize(&self, data: &Dataset<F>) -> Result<SummaryVector<F>> {
        if data.cols() != 1 {
            return Err(AmlError::DimensionMismatch {
                expected: 1,
                got: data.cols(),
            });
        }
        SummaryVector::new(mg1_summarize(data.values())?)
    }
}
