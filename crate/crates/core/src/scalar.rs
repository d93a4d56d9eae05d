//! Scalar traits.
//!
//! Everything that only needs field arithmetic (brackets, projections,
//! structure coefficients, the invariant Chern-Ricci form, the closed-form
//! flow) is written against [`Scalar`], which admits exact rationals as well
//! as `f32`/`f64`. Code that needs square roots, logarithms or eigenvalues is
//! written against [`Real`].

use std::fmt::Debug;
use std::ops::Neg;

use num_bigint::BigInt;
use num_complex::Complex;
use num_rational::{BigRational, Ratio, Rational64};
use num_traits::{FromPrimitive, Num, NumAssign, ToPrimitive};

/// An element of a field that dense elimination can work over.
pub trait FieldElem:
    Clone + Debug + PartialEq + Num + NumAssign + Neg<Output = Self> + Send + Sync + 'static
{
    /// Pivots at or below this magnitude (relative to the matrix scale) are
    /// treated as zero. Exact fields use `0.0`.
    const SINGULAR_TOL: f64;

    /// Size of the element, used for pivot selection and residual reports.
    fn magnitude(&self) -> f64;
}

/// Ordered real scalar, possibly exact.
pub trait Scalar: FieldElem + PartialOrd + FromPrimitive + ToPrimitive {
    fn abs_val(&self) -> Self {
        if *self < Self::zero() {
            -self.clone()
        } else {
            self.clone()
        }
    }

    /// Conversion from a literal. Exact types round to a nearby rational.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal not representable")
    }

    fn to_f64_lossy(&self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    fn is_exact() -> bool {
        Self::SINGULAR_TOL == 0.0
    }
}

/// Floating point scalar with transcendental functions.
pub trait Real: Scalar + nalgebra::RealField + Copy {}

macro_rules! impl_float {
    ($t:ty, $tol:expr) => {
        impl FieldElem for $t {
            const SINGULAR_TOL: f64 = $tol;
            fn magnitude(&self) -> f64 {
                (*self as f64).abs()
            }
        }
        impl Scalar for $t {}
        impl Real for $t {}
    };
}

impl_float!(f64, 1e-14);
impl_float!(f32, 1e-6);

impl FieldElem for Rational64 {
    const SINGULAR_TOL: f64 = 0.0;
    fn magnitude(&self) -> f64 {
        self.to_f64().map(f64::abs).unwrap_or(f64::INFINITY)
    }
}
impl Scalar for Rational64 {}

impl FieldElem for BigRational {
    const SINGULAR_TOL: f64 = 0.0;
    fn magnitude(&self) -> f64 {
        self.to_f64().map(f64::abs).unwrap_or(f64::INFINITY)
    }
}
impl Scalar for Ratio<BigInt> {}

impl<T: Scalar> FieldElem for Complex<T> {
    const SINGULAR_TOL: f64 = T::SINGULAR_TOL;
    fn magnitude(&self) -> f64 {
        self.re.magnitude() + self.im.magnitude()
    }
}

/// `x + 0i`.
pub fn cplx<T: Scalar>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// The imaginary unit.
pub fn imag_unit<T: Scalar>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// `1/2` in any field.
pub fn half<F: FieldElem>() -> F {
    F::one() / (F::one() + F::one())
}

/// True when `x` is zero to within `tol` (exact comparison for exact types).
pub fn negligible<F: FieldElem>(x: &F, tol: f64) -> bool {
    x.is_zero() || x.magnitude() <= tol
}
