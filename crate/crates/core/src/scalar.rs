//! Scalar abstraction shared by every numeric module.
//!
//! The algorithms only need a real field with an SVD, so anything nalgebra
//! treats as `RealField` and that converts to and from `f64` qualifies. In
//! practice that is `f32` and `f64`; the tolerances used throughout the
//! test-suite assume `f64`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// A real scalar usable by the data-driven control stack.
pub trait Real: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default {}

impl<T> Real for T where T: RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Default {}

/// Convert an `f64` literal into the working scalar.
#[inline]
pub fn lit<S: Real>(x: f64) -> S {
    S::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Convert a scalar back to `f64` for reporting.
#[inline]
pub fn to_f64<S: Real>(x: S) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

/// Convert an index or count into the working scalar.
#[inline]
pub fn from_usize<S: Real>(n: usize) -> S {
    S::from_usize(n).expect("usize representable in scalar type")
}
