//! Floating-point abstraction shared by the numeric modules.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign};

/// Real scalar type the tensor engine, SSM and layers are generic over.
pub trait Scalar:
    Float + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    fn lit(v: f64) -> Self {
        Self::from_f64(v).expect("finite literal")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Sums a multiset of values independently of their enumeration order.
///
/// The addends are sorted by total order first, so any permutation of the
/// same values produces a bit-identical result. They are then added pairwise,
/// level by level; a multiset with every value repeated twice sums to
/// exactly twice the original. `values` is used as scratch space.
pub fn ordered_sum<S: Scalar>(values: &mut [S]) -> S {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or_else(|| a.is_nan().cmp(&b.is_nan())));
    let mut n = values.len();
    if n == 0 {
        return S::zero();
    }
    while n > 1 {
        let half = n / 2;
        for i in 0..half {
            values[i] = values[2 * i] + values[2 * i + 1];
        }
        if n % 2 == 1 {
            values[half] = values[n - 1];
            n = half + 1;
        } else {
            n = half;
        }
    }
    values[0]
}
