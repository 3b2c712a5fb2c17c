//! Simultaneous-perturbation machinery: gain sequences, Rademacher
//! perturbations, the two-sided log-likelihood gradient estimate, and the
//! iterate update with box projection and step clamping.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AmlError, Result};
use crate::scalar::Scalar;

/// Fraction of each coordinate range at which a single step is clamped.
pub const STEP_CLAMP_FRACTION: f64 = 0.1;

/// The p-dimensional box of admissible parameter values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSpace<F> {
    lower: Vec<F>,
    upper: Vec<F>,
}

impl<F: Scalar> ParameterSpace<F> {
    pub fn new(lower: Vec<F>, upper: Vec<F>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(AmlError::DimensionMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        if lower.is_empty() {
            return Err(AmlError::EmptyInput("parameter space"));
        }
        for (lo, hi) in lower.iter().zip(&upper) {
            if !lo.is_finite() || !hi.is_finite() || !(*lo < *hi) {
                return Err(AmlError::InvalidParameter(format!(
                    "invalid box coordinate [{lo}, {hi}]"
                )));
            }
        }
        Ok(ParameterSpace { lower, upper })
    }

    /// The unit box `[0, 1]^p`.
    pub fn unit(p: usize) -> Self {
        ParameterSpace {
            lower: vec![F::zero(); p],
            upper: vec![F::one(); p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[F] {
        &self.lower
    }

    pub fn upper(&self) -> &[F] {
        &self.upper
    }

    pub fn range(&self, i: usize) -> F {
        self.upper[i] - self.lower[i]
    }

    pub fn contains(&self, theta: &[F]) -> bool {
        theta.len() == self.dim()
            && theta
                .iter()
                .enumerate()
                .all(|(i, t)| *t >= self.lower[i] && *t <= self.upper[i])
    }

    /// Uniform draw from the box.
    pub fn sample_uniform<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<F> {
        (0..self.dim())
            .map(|i| rng.random_range(self.lower[i]..=self.upper[i]))
            .collect()
    }
}

/// Gain sequences `a_k = a / (k + A)^alpha` and `c_k = c / k^gamma`.
///
/// `a` is per-coordinate to reflect differing slopes of the objective along
/// different axes; `c` is a scalar perturbation radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule<F> {
    pub a: Vec<F>,
    pub big_a: u64,
    pub alpha: F,
    pub c: F,
    pub gamma: F,
}

impl<F: Scalar> GainSchedule<F> {
    pub fn new(a: Vec<F>, big_a: u64, alpha: F, c: F, gamma: F) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| !v.is_finite() || *v <= F::zero()) {
            return Err(AmlError::InvalidParameter(
                "gain vector a must be strictly positive".into(),
            ));
        }
        if !(alpha > F::zero()) || !(gamma > F::zero()) || !(c > F::zero()) {
            return Err(AmlError::InvalidParameter(
                "alpha, gamma and c must be strictly positive".into(),
            ));
        }
        Ok(GainSchedule {
            a,
            big_a,
            alpha,
            c,
            gamma,
        })
    }

    pub fn dim(&self) -> usize {
        self.a.len()
    }

    /// `(a_k, c_k)` at iteration `k >= 1`.
    pub fn at(&self, k: u64) -> Result<(Vec<F>, F)> {
        Ok((self.a_at(k)?, self.c_at(k)?))
    }

    pub fn a_at(&self, k: u64) -> Result<Vec<F>> {
        if k == 0 {
            return Err(AmlError::Domain("gain schedule starts at k = 1".into()));
        }
        let denom = F::from_f64((k + self.big_a) as f64).powf(self.alpha);
        Ok(self.a.iter().map(|a| *a / denom).collect())
    }

    pub fn c_at(&self, k: u64) -> Result<F> {
        if k == 0 {
            return Err(AmlError::Domain("gain schedule starts at k = 1".into()));
        }
        Ok(self.c / F::from_f64(k as f64).powf(self.gamma))
    }
}

/// Rademacher perturbation direction; every entry is -1 or +1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Perturbation<F>(Vec<F>);

impl<F: Scalar> Perturbation<F> {
    /// Draws `p` independent fair signs from the stream.
    pub fn sample<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Self {
        Perturbation(
            (0..p)
                .map(|_| if rng.random::<bool>() { F::one() } else { -F::one() })
                .collect(),
        )
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn signs(&self) -> &[F] {
        &self.0
    }
}

/// A two-sided simultaneous-perturbation gradient estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientEstimate<F> {
    pub g: Vec<F>,
    pub log_lik_plus: F,
    pub log_lik_minus: F,
    pub c_k: F,
}

/// `g = delta * (logL+ - logL-) / (2 c_k)`.
pub fn gradient_estimate<F: Scalar>(
    delta: &Perturbation<F>,
    log_lik_plus: F,
    log_lik_minus: F,
    c_k: F,
) -> Result<GradientEstimate<F>> {
    if !log_lik_plus.is_finite() || !log_lik_minus.is_finite() {
        return Err(AmlError::Domain(
            "gradient estimate needs finite log-likelihood values".into(),
        ));
    }
    if !(c_k > F::zero()) {
        return Err(AmlError::InvalidParameter("c_k must be positive".into()));
    }
    let scale = (log_lik_plus - log_lik_minus) / (F::from_f64(2.0) * c_k);
    Ok(GradientEstimate {
        g: delta.signs().iter().map(|s| *s * scale).collect(),
        log_lik_plus,
        log_lik_minus,
        c_k,
    })
}

/// Closest point to `theta` whose both perturbed companions
/// `theta +- c_k * delta` stay inside the box.
///
/// Because every `|delta[i]| = 1`, this is the per-coordinate clamp into
/// `[lower + c_k, upper - c_k]`; the actual signs of `delta` do not matter.
/// A coordinate whose box is narrower than `2 c_k` collapses to the
/// midpoint.
pub fn project_to_feasible<F: Scalar>(
    theta: &[F],
    space: &ParameterSpace<F>,
    c_k: F,
    _delta: &Perturbation<F>,
) -> Vec<F> {
    project_box(theta, space, c_k)
}

/// Sign-free form of [`project_to_feasible`] (the box geometry only depends
/// on `c_k`).
pub fn project_box<F: Scalar>(theta: &[F], space: &ParameterSpace<F>, c_k: F) -> Vec<F> {
    let half = F::from_f64(0.5);
    theta
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let lo = space.lower()[i] + c_k;
            let hi = space.upper()[i] - c_k;
            if lo > hi {
                (space.lower()[i] + space.upper()[i]) * half
            } else {
                t.max(lo).min(hi)
            }
        })
        .collect()
}

/// Clamps each step coordinate into +-10% of that coordinate's range.
pub fn clamp_step<F: Scalar>(step: &[F], space: &ParameterSpace<F>) -> Vec<F> {
    let frac = F::from_f64(STEP_CLAMP_FRACTION);
    step.iter()
        .enumerate()
        .map(|(i, s)| {
            let cap = frac * space.range(i);
            s.max(-cap).min(cap)
        })
        .collect()
}

/// One iterate update: scale the gradient by `a_k`, clamp the step, move,
/// then project so that the next perturbation stays feasible.
pub fn update_iterate<F: Scalar>(
    theta: &[F],
    grad: &GradientEstimate<F>,
    a_k: &[F],
    space: &ParameterSpace<F>,
    c_next: F,
    delta_next: &Perturbation<F>,
) -> Vec<F> {
    let raw: Vec<F> = a_k.iter().zip(&grad.g).map(|(a, g)| *a * *g).collect();
    let step = clamp_step(&raw, space);
    let moved: Vec<F> = theta.iter().zip(&step).map(|(t, s)| *t + *s).collect();
    project_to_feasible(&moved, space, c_next, delta_next)
}
