//! Scalar abstraction for the spherical math.

use std::fmt::{Debug, Display};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point type usable by the geometry layer: `f32` or `f64`.
pub trait Scalar:
    Float + FloatConst + FromPrimitive + ToPrimitive + Debug + Display + Default + Send + Sync + 'static
{
    /// Converts an `f64` literal into this scalar.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("f64 literal representable in scalar type")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Wraps a heading in degrees into `[0, 360)`.
pub fn wrap_degrees<T: Scalar>(deg: T) -> T {
    let full = T::lit(360.0);
    let mut r = deg % full;
    if r < T::zero() {
        r = r + full;
    }
    // `-tiny + 360` rounds to exactly 360
    if r >= full {
        r = T::zero();
    }
    r
}

/// Signed difference `a - b` folded into `[-180, 180)`.
pub fn heading_delta<T: Scalar>(a: T, b: T) -> T {
    let d = wrap_degrees(a - b);
    if d >= T::lit(180.0) {
        d - T::lit(360.0)
    } else {
        d
    }
}
