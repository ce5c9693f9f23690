//! Numeric abstraction shared by the workloads, the bound checkers and the
//! value perturbation model.
//!
//! Every kernel in the crate is written against [`Scalar`] rather than a
//! concrete float so the same region-structured code can be exercised at
//! single and double precision. The fixtures and the default experiment
//! pipeline run at `f32`.

use std::fmt::{Debug, Display};

use num_traits::{Float, FromPrimitive, NumAssignOps, ToPrimitive};

/// Floating point type a workload can be executed and perturbed in.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssignOps + Debug + Display + Default + Send + Sync + 'static
{
    /// Width of the binary representation in bits.
    const BITS: u32;

    /// Reinterpret the low [`Self::BITS`] bits of `bits` as a value of this type.
    fn from_bit_pattern(bits: u64) -> Self;

    /// The binary representation, zero-extended to 64 bits.
    fn to_bit_pattern(self) -> u64;

    /// Lossy conversion from `f64`; used for constants and on-disk values.
    fn of(value: f64) -> Self {
        Self::from_f64(value).expect("every f64 is representable after rounding")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().expect("float to f64 is total")
    }
}

impl Scalar for f32 {
    const BITS: u32 = 32;

    #[inline]
    fn from_bit_pattern(bits: u64) -> Self {
        f32::from_bits(bits as u32)
    }

    #[inline]
    fn to_bit_pattern(self) -> u64 {
        u64::from(self.to_bits())
    }
}

impl Scalar for f64 {
    const BITS: u32 = 64;

    #[inline]
    fn from_bit_pattern(bits: u64) -> Self {
        f64::from_bits(bits)
    }

    #[inline]
    fn to_bit_pattern(self) -> u64 {
        self.to_bits()
    }
}

/// Logistic function that stays strictly inside (0, 1) for every input in
/// the bound checker's range [-90, 10], at both precisions.
///
/// `1 / (1 + exp(-x))` overflows `exp` in `f32` at x = -90, so negative inputs
/// go through `exp(x) / (1 + exp(x))` instead.
#[inline]
pub fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
