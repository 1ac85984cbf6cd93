//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point type the numerical core is generic over (`f32` or `f64`).
///
/// `RealField` supplies the linear algebra, `num-traits` the lossless
/// conversions used when talking to `f64`-only code (quantiles, RNG draws).
pub trait Scalar: RealField + Copy + FromPrimitive + ToPrimitive {
    /// Converts an `f64` constant into this scalar.
    #[inline]
    fn of(x: f64) -> Self {
        Self::from_f64(x).expect("f64 is representable in every Scalar")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of_usize(n: usize) -> Self {
        Self::of(n as f64)
    }

    /// Default relative tolerance for rank and definiteness decisions.
    fn rank_tol() -> Self;
}

impl Scalar for f64 {
    fn rank_tol() -> Self {
        1e-12
    }
}

impl Scalar for f32 {
    fn rank_tol() -> Self {
        1e-6
    }
}
