//! Scalar abstraction over the floating-point type used by the estimator.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::Float;
use rand::distr::uniform::SampleUniform;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

/// Floating-point scalar usable throughout the crate.
///
/// Implemented for `f32` and `f64`. The sampling hooks route through
/// `rand_distr` so generic code can draw standard normal and exponential
/// variates without viral `where` clauses.
pub trait Scalar:
    Float + SampleUniform + Sum<Self> + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64` (used for literals and defaults).
    fn from_f64(x: f64) -> Self;

    /// Lossy conversion to `f64` (used for reporting).
    fn to_f64(self) -> f64;

    /// One standard normal draw from the given stream.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// One standard (unit-rate) exponential draw from the given stream.
    fn standard_exp<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

macro_rules! impl_scalar {
    ($($t:ty),*) => {
        $(
            impl Scalar for $t {
                #[inline]
                fn from_f64(x: f64) -> Self {
                    x as $t
                }
                #[inline]
                fn to_f64(self) -> f64 {
                    self as f64
                }
                #[inline]
                fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
                    StandardNormal.sample(rng)
                }
                #[inline]
                fn standard_exp<R: Rng + ?Sized>(rng: &mut R) -> Self {
                    Exp1.sample(rng)
                }
            }
        )*
    };
}

impl_scalar!(f32, f64);
