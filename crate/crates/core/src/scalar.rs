//! Scalar abstraction: the numeric type all estimators are generic over.
//!
//! Everything numerical in this crate is written against [`Scalar`], a
//! floating-point trait built on `num_traits::Float` plus the two sampling
//! hooks the data generators need. `f64` and `f32` implement it; the crate
//! root exports `f64` aliases for the common types.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// Floating-point scalar with conversions and distribution sampling.
///
/// The sampling methods are trait members (rather than generic bounds at the
/// call sites) so that the sampling algorithm is fixed per implementation:
/// `f64` and `f32` both delegate to `rand_distr`'s ziggurat sampler and the
/// standard uniform, which keeps generated streams reproducible for a given
/// scalar type and seed.
pub trait Scalar:
    Float
    + NumAssignOps
    + FromPrimitive
    + ToPrimitive
    + Sum<Self>
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Convert an `f64` constant into this scalar type.
    ///
    /// Intended for literals appearing in formulas (`T::of(1.96)`); panics
    /// only if the constant is not representable at all, which no finite
    /// literal in this crate triggers.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("finite f64 constant must convert")
    }

    /// Convert a count (sample size, trial count) into this scalar type.
    fn from_count(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Round-trip into `f64` for reporting and serialization.
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("float scalar must convert to f64")
    }

    /// Draw one standard-normal variate.
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self;

    /// Draw one uniform variate on [0, 1).
    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self;
}

impl Scalar for f64 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f64>()
    }
}

impl Scalar for f32 {
    fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> Self {
        StandardNormal.sample(rng)
    }

    fn standard_uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        rng.random::<f32>()
    }
}
