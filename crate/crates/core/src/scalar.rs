//! Floating-point abstraction used by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Scalar type the model is generic over.
///
/// Anything float-like with the usual arithmetic, comparisons and
/// conversions qualifies; in practice this means `f32` and `f64`. The crate
/// root exports `f64` aliases for the common case.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum<Self> + Debug + Display + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Float + FromPrimitive + NumAssign + Sum<T> + Debug + Display + Send + Sync + 'static
{
}

/// Converts an `f64` constant into `T`.
///
/// Panics only if `T` cannot represent any `f64` at all, which no `Scalar`
/// in practice fails; out-of-range magnitudes saturate per `num-traits`.
pub(crate) fn lit<T: Scalar>(x: f64) -> T {
    T::from_f64(x).expect("f64 constant must convert into the scalar type")
}

/// Converts a count into `T` (lossy above the mantissa range, like `as`).
pub(crate) fn count<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("usize count must convert into the scalar type")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lit_round_trips_for_both_precisions() {
        assert_eq!(lit::<f64>(0.33), 0.33);
        assert_eq!(lit::<f32>(0.5), 0.5f32);
    }

    #[test]
    fn count_converts_small_integers_exactly() {
        assert_eq!(count::<f64>(200), 200.0);
        assert_eq!(count::<f32>(3), 3.0f32);
    }
}
