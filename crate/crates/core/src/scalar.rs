//! Scalar abstraction shared by the butterfly kernels.
//!
//! Factors and layers are generic over [`Scalar`], which covers `f32`, `f64`
//! and their complex counterparts. Anything that needs `exp`/`ln` (LU diagonals,
//! rotation angles, log-determinants) goes through [`RealScalar`].

use std::fmt::Debug;
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FromPrimitive, NumAssign, Zero};

/// Real floating point scalar: `f32` or `f64`.
pub trait RealScalar: Scalar<Real = Self> + Float + FromPrimitive + Default {}

impl RealScalar for f32 {}
impl RealScalar for f64 {}

/// A field element a butterfly weight can live in.
pub trait Scalar:
    Copy + Debug + PartialEq + Send + Sync + 'static + NumAssign + std::ops::Neg<Output = Self> + Sum
{
    type Real: RealScalar;

    fn from_real(r: Self::Real) -> Self;

    /// Build from real/imaginary parts given as `f64`. Real scalars drop `im`.
    fn from_parts(re: f64, im: f64) -> Self;

    /// Absolute value (modulus for complex values).
    fn modulus(self) -> Self::Real;

    fn conjugate(self) -> Self;

    fn finite(self) -> bool;

    fn to_c64(self) -> Complex<f64>;

    /// `self / |self|`; the sign for reals, the phase for complex values.
    fn unit(self) -> Self {
        let m = self.modulus();
        if m == Self::Real::zero() {
            Self::zero()
        } else {
            self / Self::from_real(m)
        }
    }
}

macro_rules! real_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            type Real = $t;

            #[inline]
            fn from_real(r: $t) -> Self {
                r
            }
            #[inline]
            fn from_parts(re: f64, _im: f64) -> Self {
                re as $t
            }
            #[inline]
            fn modulus(self) -> $t {
                self.abs()
            }
            #[inline]
            fn conjugate(self) -> Self {
                self
            }
            #[inline]
            fn finite(self) -> bool {
                self.is_finite()
            }
            #[inline]
            fn to_c64(self) -> Complex<f64> {
                Complex::new(self as f64, 0.0)
            }
        }
    };
}

real_scalar!(f32);
real_scalar!(f64);

impl<R: RealScalar> Scalar for Complex<R> {
    type Real = R;

    #[inline]
    fn from_real(r: R) -> Self {
        Complex::new(r, R::zero())
    }
    #[inline]
    fn from_parts(re: f64, im: f64) -> Self {
        Complex::new(R::from_f64(re).unwrap(), R::from_f64(im).unwrap())
    }
    #[inline]
    fn modulus(self) -> R {
        self.norm()
    }
    #[inline]
    fn conjugate(self) -> Self {
        self.conj()
    }
    #[inline]
    fn finite(self) -> bool {
        self.re.is_finite() && self.im.is_finite()
    }
    #[inline]
    fn to_c64(self) -> Complex<f64> {
        Complex::new(self.re.to_f64().unwrap(), self.im.to_f64().unwrap())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_is_sign_or_phase() {
        assert_eq!((-3.0f64).unit(), -1.0);
        assert_eq!(0.0f64.unit(), 0.0);
        let z = Complex::new(3.0f64, 4.0).unit();
        assert!((z - Complex::new(0.6, 0.8)).norm() < 1e-15);
    }

    #[test]
    fn from_parts_drops_imaginary_for_reals() {
        assert_eq!(f32::from_parts(1.5, 2.0), 1.5f32);
        assert_eq!(Complex::<f64>::from_parts(1.5, 2.0), Complex::new(1.5, 2.0));
    }
}
