//! Scalar abstraction shared by every numerical routine in the crate.

use nalgebra::{Complex, DMatrix, DVector, RealField};
use num_traits::{FromPrimitive, ToPrimitive};
use serde::Serialize;

/// Real scalar the laboratory computes with (`f32` or `f64`).
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Serialize + Send + Sync + 'static
{
}

impl<T> Real for T where
    T: RealField + Copy + FromPrimitive + ToPrimitive + Serialize + Send + Sync + 'static
{
}

/// Dense complex matrix in the reference eigenbasis.
pub type CMatrix<T> = DMatrix<Complex<T>>;
/// Dense complex column vector in the reference eigenbasis.
pub type CVector<T> = DVector<Complex<T>>;

/// Converts an `f64` literal into the working scalar.
#[inline]
pub fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 literal representable in scalar type")
}

/// Converts the working scalar into `f64` for reporting and fitting.
#[inline]
pub fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().unwrap_or(f64::NAN)
}

#[inline]
pub fn cplx<T: Real>(re: T, im: T) -> Complex<T> {
    Complex::new(re, im)
}

#[inline]
pub fn real<T: Real>(re: T) -> Complex<T> {
    Complex::new(re, T::zero())
}

/// The imaginary unit.
#[inline]
pub fn imag_unit<T: Real>() -> Complex<T> {
    Complex::new(T::zero(), T::one())
}

/// Japanese bracket ⟨x⟩ = (1 + x²)^{1/2}.
#[inline]
pub fn japanese<T: Real>(x: T) -> T {
    (T::one() + x * x).sqrt()
}

/// Relative tolerance used for hermiticity checks: 1e-12 in double precision,
/// a few hundred ulps otherwise.
pub fn hermitian_tolerance<T: Real>() -> T {
    let floor = cast::<T>(1e-12);
    let ulps = T::default_epsilon() * cast(256.0);
    if ulps > floor {
        ulps
    } else {
        floor
    }
}

/// e^{iθ}.
#[inline]
pub fn phase<T: Real>(theta: T) -> nalgebra::Complex<T> {
    nalgebra::Complex::new(theta.cos(), theta.sin())
}

/// Modulus of a complex number.
#[inline]
pub fn modulus<T: Real>(z: nalgebra::Complex<T>) -> T {
    z.norm_sqr().sqrt()
}
