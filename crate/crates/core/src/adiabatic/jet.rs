//! Truncated Taylor series of matrix-valued functions of t, and the order by
//! order recursion for spectral projectors of a Taylor-expanded operator.

use crate::scalar::{cast, imag_unit, real, CMatrix, Real};
use nalgebra::Complex;

/// Taylor coefficients at a base time t: A(t + s) = Σ_ℓ a[ℓ]·s^ℓ.
pub type Jet<T> = Vec<CMatrix<T>>;

fn factorial(n: usize) -> f64 {
    (1..=n).fold(1.0, |acc, k| acc * k as f64)
}

/// Jet from the derivatives ∂_t^ℓ A(t), ℓ = 0, 1, ….
pub fn from_derivatives<T: Real>(derivs: Vec<CMatrix<T>>) -> Jet<T> {
    derivs
        .into_iter()
        .enumerate()
        .map(|(l, d)| d / real(cast::<T>(factorial(l))))
        .collect()
}

/// ∂_t^ℓ A(t) = ℓ!·a[ℓ].
pub fn derivative<T: Real>(a: &Jet<T>, order: usize) -> Option<CMatrix<T>> {
    a.get(order).map(|c| c * real(cast::<T>(factorial(order))))
}

/// Jet of ∂_tA, one order shorter.
pub fn differentiate<T: Real>(a: &Jet<T>) -> Jet<T> {
    a.iter()
        .enumerate()
        .skip(1)
        .map(|(l, c)| c * real(cast::<T>(l as f64)))
        .collect()
}

/// Cauchy product of two jets truncated to `len` coefficients.
pub fn mul<T: Real>(a: &Jet<T>, b: &Jet<T>, len: usize) -> Jet<T> {
    let (r, c) = (a[0].nrows(), b[0].ncols());
    (0..len)
        .map(|l| {
            let mut out = CMatrix::<T>::zeros(r, c);
            for i in 0..=l {
                if i < a.len() && l - i < b.len() {
                    out += &a[i] * &b[l - i];
                }
            }
            out
        })
        .collect()
}

/// Jet of [A, B] truncated to `len` coefficients.
pub fn commutator<T: Real>(a: &Jet<T>, b: &Jet<T>, len: usize) -> Jet<T> {
    let ab = mul(a, b, len);
    let ba = mul(b, a, len);
    ab.into_iter().zip(ba).map(|(x, y)| x - y).collect()
}

/// E*·a[ℓ]·E for every coefficient.
pub fn to_basis<T: Real>(e: &CMatrix<T>, a: &[CMatrix<T>]) -> Jet<T> {
    a.iter().map(|c| e.ad_mul(&(c * e))).collect()
}

/// E·a[ℓ]·E* for every coefficient.
pub fn from_basis<T: Real>(e: &CMatrix<T>, a: &[CMatrix<T>]) -> Jet<T> {
    a.iter().map(|c| e * c * e.adjoint()).collect()
}

/// [X, P] for P = diag(mask): entries X_ab·(m_b − m_a).
pub fn mask_commutator<T: Real>(x: &CMatrix<T>, mask: &[bool]) -> CMatrix<T> {
    CMatrix::from_fn(x.nrows(), x.ncols(), |a, b| match (mask[a], mask[b]) {
        (false, true) => x[(a, b)],
        (true, false) => -x[(a, b)],
        _ => Complex::new(T::zero(), T::zero()),
    })
}

/// Taylor coefficients of the spectral projector P(s) of
/// Ĥ(s) = diag(values) + Σ_{ℓ≥1} h[ℓ]·s^ℓ onto the eigenvalues flagged by
/// `mask`, all in the eigenbasis of Ĥ(0). `h[0]` is ignored.
///
/// P² = P fixes the diagonal blocks of each new coefficient and [Ĥ, P] = 0
/// fixes the off-diagonal ones; flagged and unflagged eigenvalues must be
/// distinct.
pub fn projector_jet<T: Real>(values: &[T], mask: &[bool], h: &Jet<T>) -> Jet<T> {
    let n = values.len();
    let zero = Complex::new(T::zero(), T::zero());
    let mut p: Jet<T> = vec![CMatrix::from_fn(n, n, |a, b| {
        if a == b && mask[a] {
            real(T::one())
        } else {
            zero
        }
    })];
    for l in 1..h.len() {
        let mut s = CMatrix::<T>::zeros(n, n);
        for a in 1..l {
            s += &p[a] * &p[l - a];
        }
        let mut r = -mask_commutator(&h[l], mask);
        for a in 1..l {
            r -= &h[a] * &p[l - a] - &p[l - a] * &h[a];
        }
        let next = CMatrix::from_fn(n, n, |a, b| match (mask[a], mask[b]) {
            (true, true) => -s[(a, b)],
            (false, false) => s[(a, b)],
            _ => r[(a, b)] / real(values[a] - values[b]),
        });
        p.push(next);
    }
    p
}

/// i·A for every coefficient.
pub fn times_i<T: Real>(a: &Jet<T>) -> Jet<T> {
    a.iter().map(|c| c * imag_unit::<T>()).collect()
}
