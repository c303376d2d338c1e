//! Real scalar abstraction: f32 or f64.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, NumAssign};

/// Floating-point scalar the quantum kernel and neuron models are generic
/// over. Implemented for `f32` and `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Debug + Display + Send + Sync + 'static
{
    /// Lossless-enough conversion from an `f64` literal.
    fn from_f64_lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal converts to scalar")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
