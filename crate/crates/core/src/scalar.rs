//! Scalar abstraction for the learnable and probabilistic parts of the stack.
//!
//! Training runs in `f64`; deployed checkpoints run in `f32`. Geometry and
//! simulation stay in `f64` since map files are specified in double precision.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    /// Lossy conversion from a double-precision constant.
    #[inline]
    fn c(v: f64) -> Self {
        Self::from_f64(v).expect("finite constant")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn as_f32(self) -> f32 {
        self.to_f32().unwrap_or(f32::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}
