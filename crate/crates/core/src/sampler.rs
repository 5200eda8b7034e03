//! Concrete operator samplers: constants, declarative sums of modulated
//! terms with exact time derivatives, closure-backed samplers and sums.

use crate::error::Result;
use crate::linalg::{richardson_central, HermitianEigen};
use crate::scalar::{cast, real, CMatrix, CVector, Real};
use crate::spectral::{check_order, OperatorMatrix, OperatorSampler};
use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use std::sync::{Arc, OnceLock};

/// A time-independent operator.
pub struct ConstantSampler<T: Real> {
    op: OperatorMatrix<T>,
    eigen: OnceLock<HermitianEigen<T>>,
}

impl<T: Real> ConstantSampler<T> {
    pub fn new(op: OperatorMatrix<T>) -> Self {
        Self {
            op,
            eigen: OnceLock::new(),
        }
    }

    /// Supplies a precomputed eigen-decomposition of the (hermitian) operator.
    pub fn with_eigen(op: OperatorMatrix<T>, eigen: HermitianEigen<T>) -> Self {
        let cell = OnceLock::new();
        let _ = cell.set(eigen);
        Self { op, eigen: cell }
    }
}

impl<T: Real> OperatorSampler<T> for ConstantSampler<T> {
    fn dim(&self) -> usize {
        self.op.dim()
    }

    fn eval(&self, _t: T) -> OperatorMatrix<T> {
        self.op.clone()
    }

    fn derivative(&self, _t: T, order: usize) -> Result<OperatorMatrix<T>> {
        if order == 0 {
            Ok(self.op.clone())
        } else {
            Ok(OperatorMatrix::zeros(self.op.dim()))
        }
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn is_time_independent(&self) -> bool {
        true
    }

    fn frozen_eigen(&self) -> Option<&HermitianEigen<T>> {
        if !self.op.is_hermitian() {
            return None;
        }
        Some(self.eigen.get_or_init(|| HermitianEigen::new(self.op.entries())))
    }
}

/// Scalar time profile with derivatives of every order.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Envelope {
    Constant { value: f64 },
    /// amplitude · cos(frequency·t + phase)
    Cosine { amplitude: f64, frequency: f64, phase: f64 },
}

impl Envelope {
    pub fn constant(value: f64) -> Self {
        Envelope::Constant { value }
    }

    pub fn cosine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Envelope::Cosine {
            amplitude,
            frequency,
            phase,
        }
    }

    /// amplitude · sin(frequency·t + phase)
    pub fn sine(amplitude: f64, frequency: f64, phase: f64) -> Self {
        Self::cosine(amplitude, frequency, phase - std::f64::consts::FRAC_PI_2)
    }

    /// ∂_t^order of the profile.
    pub fn derivative<T: Real>(&self, t: T, order: usize) -> T {
        match *self {
            Envelope::Constant { value } => {
                if order == 0 {
                    cast(value)
                } else {
                    T::zero()
                }
            }
            Envelope::Cosine {
                amplitude,
                frequency,
                phase,
            } => {
                let w: T = cast(frequency);
                let shift = T::frac_pi_2() * cast::<T>((order % 4) as f64);
                let arg = w * t + cast::<T>(phase) + shift;
                cast::<T>(amplitude) * w.powi(order as i32) * arg.cos()
            }
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Envelope::Constant { .. })
            || matches!(self, Envelope::Cosine { amplitude, frequency, .. } if *amplitude == 0.0 || *frequency == 0.0)
    }
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug)]
pub struct SparseMatrix<T: Real> {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<Complex<T>>,
}

impl<T: Real> SparseMatrix<T> {
    /// Builds from (row, col, value) triplets; duplicates are summed.
    pub fn from_triplets(dim: usize, mut triplets: Vec<(usize, usize, Complex<T>)>) -> Self {
        triplets.sort_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; dim + 1];
        let mut cols = Vec::with_capacity(triplets.len());
        let mut vals: Vec<Complex<T>> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in triplets {
            assert!(r < dim && c < dim, "triplet outside matrix");
            if last == Some((r, c)) {
                *vals.last_mut().expect("previous entry") += v;
                continue;
            }
            last = Some((r, c));
            cols.push(c);
            vals.push(v);
            row_ptr[r + 1] += 1;
        }
        for i in 0..dim {
            row_ptr[i + 1] += row_ptr[i];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn apply(&self, v: &CVector<T>) -> CVector<T> {
        CVector::from_fn(self.dim, |r, _| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).fold(Complex::new(T::zero(), T::zero()), |acc, k| {
                acc + self.vals[k] * v[self.cols[k]]
            })
        })
    }

    pub fn add_to_dense(&self, out: &mut CMatrix<T>, scale: T) {
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                out[(r, self.cols[k])] += self.vals[k] * real(scale);
            }
        }
    }

    pub fn to_dense(&self) -> CMatrix<T> {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        self.add_to_dense(&mut m, T::one());
        m
    }
}

/// Matrix part of a modulated term.
#[derive(Clone, Debug)]
pub enum TermMatrix<T: Real> {
    Dense(CMatrix<T>),
    Diagonal(Vec<T>),
    Sparse(SparseMatrix<T>),
}

impl<T: Real> TermMatrix<T> {
    fn dim(&self) -> usize {
        match self {
            TermMatrix::Dense(m) => m.nrows(),
            TermMatrix::Diagonal(d) => d.len(),
            TermMatrix::Sparse(s) => s.dim(),
        }
    }

    fn add_to(&self, out: &mut CMatrix<T>, scale: T) {
        match self {
            TermMatrix::Dense(m) => *out += m * real(scale),
            TermMatrix::Diagonal(d) => {
                for (i, &x) in d.iter().enumerate() {
                    out[(i, i)] += real(x * scale);
                }
            }
            TermMatrix::Sparse(s) => s.add_to_dense(out, scale),
        }
    }

    fn apply_add(&self, v: &CVector<T>, out: &mut CVector<T>, scale: T) {
        match self {
            TermMatrix::Dense(m) => *out += (m * v) * real(scale),
            TermMatrix::Diagonal(d) => {
                for (i, &x) in d.iter().enumerate() {
                    out[i] += v[i] * real(x * scale);
                }
            }
            TermMatrix::Sparse(s) => *out += s.apply(v) * real(scale),
        }
    }
}

/// L(t) = Σ_q f_q(t)·A_q with declarative envelopes f_q, so that every time
/// derivative is exact.
pub struct ModulatedSampler<T: Real> {
    dim: usize,
    terms: Vec<(Envelope, TermMatrix<T>)>,
    nu: T,
    krylov: bool,
    eigen: OnceLock<HermitianEigen<T>>,
}

impl<T: Real> ModulatedSampler<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            terms: Vec::new(),
            nu: T::zero(),
            krylov: false,
            eigen: OnceLock::new(),
        }
    }

    pub fn term(mut self, envelope: Envelope, matrix: TermMatrix<T>) -> Self {
        assert_eq!(matrix.dim(), self.dim, "term dimension mismatch");
        self.terms.push((envelope, matrix));
        self
    }

    pub fn with_nu(mut self, nu: T) -> Self {
        self.nu = nu;
        self
    }

    /// Requests matrix-free Krylov stepping in the propagator.
    pub fn with_krylov(mut self, krylov: bool) -> Self {
        self.krylov = krylov;
        self
    }

    pub fn terms(&self) -> &[(Envelope, TermMatrix<T>)] {
        &self.terms
    }

    /// Common period of all non-constant envelopes, if one exists.
    pub fn period(&self) -> Option<f64> {
        let freqs: Vec<f64> = self
            .terms
            .iter()
            .filter(|(e, _)| !e.is_constant())
            .filter_map(|(e, _)| match e {
                Envelope::Cosine { frequency, .. } => Some(frequency.abs()),
                _ => None,
            })
            .collect();
        let base = *freqs.first()?;
        let ratio_ok = freqs.iter().all(|f| {
            let r = f / base;
            (r - r.round()).abs() < 1e-12 && r.round() >= 1.0
        });
        ratio_ok.then(|| 2.0 * std::f64::consts::PI / base)
    }

    fn assemble(&self, t: T, order: usize) -> CMatrix<T> {
        let mut m = CMatrix::zeros(self.dim, self.dim);
        for (env, mat) in &self.terms {
            let f = env.derivative(t, order);
            if f != T::zero() {
                mat.add_to(&mut m, f);
            }
        }
        m
    }
}

impl<T: Real> OperatorSampler<T> for ModulatedSampler<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: T) -> OperatorMatrix<T> {
        OperatorMatrix::new(self.assemble(t, 0))
    }

    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>> {
        Ok(OperatorMatrix::new(self.assemble(t, order)))
    }

    fn max_order(&self) -> usize {
        usize::MAX
    }

    fn nu(&self) -> T {
        self.nu
    }

    fn apply(&self, t: T, v: &CVector<T>) -> CVector<T> {
        let mut out = CVector::zeros(self.dim);
        for (env, mat) in &self.terms {
            let f = env.derivative(t, 0);
            if f != T::zero() {
                mat.apply_add(v, &mut out, f);
            }
        }
        out
    }

    fn is_time_independent(&self) -> bool {
        self.terms.iter().all(|(e, _)| e.is_constant())
    }

    fn frozen_eigen(&self) -> Option<&HermitianEigen<T>> {
        if !self.is_time_independent() || self.krylov {
            return None;
        }
        Some(self.eigen.get_or_init(|| HermitianEigen::new(&self.assemble(T::zero(), 0))))
    }

    fn prefers_krylov(&self) -> bool {
        self.krylov
    }
}

type EvalFn<T> = Box<dyn Fn(T) -> CMatrix<T> + Send + Sync>;
type DerivFn<T> = Box<dyn Fn(T, usize) -> CMatrix<T> + Send + Sync>;

/// Closure-backed sampler. Without an analytic derivative callback the
/// derivatives are nested fourth-order central differences.
pub struct FnSampler<T: Real> {
    dim: usize,
    eval: EvalFn<T>,
    deriv: Option<DerivFn<T>>,
    max_order: usize,
    nu: T,
    step: T,
}

impl<T: Real> FnSampler<T> {
    pub fn new(
        dim: usize,
        eval: impl Fn(T) -> CMatrix<T> + Send + Sync + 'static,
        max_order: usize,
        nu: T,
    ) -> Self {
        Self {
            dim,
            eval: Box::new(eval),
            deriv: None,
            max_order,
            nu,
            step: default_fd_step(),
        }
    }

    pub fn with_derivative(
        dim: usize,
        eval: impl Fn(T) -> CMatrix<T> + Send + Sync + 'static,
        deriv: impl Fn(T, usize) -> CMatrix<T> + Send + Sync + 'static,
        max_order: usize,
        nu: T,
    ) -> Self {
        Self {
            dim,
            eval: Box::new(eval),
            deriv: Some(Box::new(deriv)),
            max_order,
            nu,
            step: default_fd_step(),
        }
    }

    fn fd(&self, t: T, order: usize) -> CMatrix<T> {
        if order == 0 {
            return (self.eval)(t);
        }
        let h = self.step;
        let two = cast::<T>(2.0);
        richardson_central(
            &self.fd(t - two * h, order - 1),
            &self.fd(t - h, order - 1),
            &self.fd(t + h, order - 1),
            &self.fd(t + two * h, order - 1),
            h,
        )
    }
}

/// Central-difference step: 1e-4 in double precision, larger for `f32`.
pub fn default_fd_step<T: Real>() -> T {
    let eps = T::default_epsilon();
    let h = cast::<T>(1e-4);
    let alt = eps.powf(cast(0.2));
    if alt > h {
        alt
    } else {
        h
    }
}

impl<T: Real> OperatorSampler<T> for FnSampler<T> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, t: T) -> OperatorMatrix<T> {
        OperatorMatrix::new((self.eval)(t))
    }

    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>> {
        check_order(order, self.max_order)?;
        if order == 0 {
            return Ok(self.eval(t));
        }
        let m = match &self.deriv {
            Some(d) => d(t, order),
            None => self.fd(t, order),
        };
        Ok(OperatorMatrix::new(m))
    }

    fn max_order(&self) -> usize {
        self.max_order
    }

    fn nu(&self) -> T {
        self.nu
    }
}

/// Σ_i c_i·S_i(t).
pub struct SumSampler<T: Real> {
    parts: Vec<(T, Arc<dyn OperatorSampler<T>>)>,
    eigen: OnceLock<HermitianEigen<T>>,
}

impl<T: Real> SumSampler<T> {
    pub fn new(parts: Vec<(T, Arc<dyn OperatorSampler<T>>)>) -> Self {
        assert!(!parts.is_empty(), "sum of no samplers");
        let d = parts[0].1.dim();
        assert!(parts.iter().all(|(_, s)| s.dim() == d), "dimension mismatch");
        Self {
            parts,
            eigen: OnceLock::new(),
        }
    }
}

impl<T: Real> OperatorSampler<T> for SumSampler<T> {
    fn dim(&self) -> usize {
        self.parts[0].1.dim()
    }

    fn eval(&self, t: T) -> OperatorMatrix<T> {
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for (c, s) in &self.parts {
            m += s.eval(t).into_entries() * real(*c);
        }
        OperatorMatrix::new(m)
    }

    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>> {
        check_order(order, self.max_order())?;
        let mut m = CMatrix::zeros(self.dim(), self.dim());
        for (c, s) in &self.parts {
            m += s.derivative(t, order)?.into_entries() * real(*c);
        }
        Ok(OperatorMatrix::new(m))
    }

    fn max_order(&self) -> usize {
        self.parts.iter().map(|(_, s)| s.max_order()).min().unwrap_or(0)
    }

    fn nu(&self) -> T {
        self.parts
            .iter()
            .map(|(_, s)| s.nu())
            .fold(T::zero(), |a, b| if b > a { b } else { a })
    }

    fn apply(&self, t: T, v: &CVector<T>) -> CVector<T> {
        let mut out = CVector::zeros(self.dim());
        for (c, s) in &self.parts {
            out += s.apply(t, v) * real(*c);
        }
        out
    }

    fn is_time_independent(&self) -> bool {
        self.parts.iter().all(|(_, s)| s.is_time_independent())
    }

    fn frozen_eigen(&self) -> Option<&HermitianEigen<T>> {
        if !self.is_time_independent() || self.prefers_krylov() {
            return None;
        }
        let m = self.eval(T::zero());
        if !m.is_hermitian() {
            return None;
        }
        Some(self.eigen.get_or_init(|| HermitianEigen::new(m.entries())))
    }

    fn prefers_krylov(&self) -> bool {
        self.parts.iter().any(|(_, s)| s.prefers_krylov())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn envelope_derivatives_follow_cosine_cycle() {
        let e = Envelope::cosine(2.0, 3.0, 0.1);
        let t = 0.4f64;
        let arg = 3.0 * t + 0.1;
        assert_relative_eq!(e.derivative(t, 0), 2.0 * arg.cos(), epsilon = 1e-14);
        assert_relative_eq!(e.derivative(t, 1), -6.0 * arg.sin(), epsilon = 1e-13);
        assert_relative_eq!(e.derivative(t, 2), -18.0 * arg.cos(), epsilon = 1e-12);
        assert_relative_eq!(e.derivative(t, 3), 54.0 * arg.sin(), epsilon = 1e-12);
        let s = Envelope::sine(1.0, 1.0, 0.0);
        assert_relative_eq!(s.derivative(0.3f64, 0), 0.3f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn modulated_sampler_derivative_consistent_with_differences() {
        let d = 3;
        let a = CMatrix::<f64>::from_fn(d, d, |i, j| Complex::new((i + j) as f64, 0.0));
        let s = ModulatedSampler::new(d)
            .term(Envelope::constant(1.0), TermMatrix::Diagonal(vec![1.0, 2.0, 3.0]))
            .term(Envelope::cosine(0.5, 2.0, 0.3), TermMatrix::Dense(a));
        let t = 0.7;
        let exact = s.derivative(t, 1).unwrap().into_entries();
        let mut prev = f64::INFINITY;
        for &h in &[1e-2, 5e-3, 2.5e-3] {
            let fd = (s.eval(t + h).into_entries() - s.eval(t - h).into_entries()) / Complex::new(2.0 * h, 0.0);
            let err = (fd - &exact).norm();
            if prev.is_finite() {
                let ratio = prev / err;
                assert!(ratio > 3.6 && ratio < 4.4, "ratio {ratio}");
            }
            prev = err;
        }
        assert_eq!(s.period(), Some(std::f64::consts::PI));
    }

    #[test]
    fn sparse_matches_dense() {
        let trip = vec![
            (0, 1, Complex::new(1.0, 0.0)),
            (1, 0, Complex::new(1.0, 0.0)),
            (2, 2, Complex::new(0.5, 0.0)),
            (2, 2, Complex::new(0.5, 0.0)),
        ];
        let s = SparseMatrix::<f64>::from_triplets(3, trip);
        let v = CVector::from_vec(vec![Complex::new(1.0, 0.0), Complex::new(2.0, 1.0), Complex::new(-1.0, 0.0)]);
        assert!((s.apply(&v) - s.to_dense() * &v).norm() < 1e-15);
        assert_eq!(s.nnz(), 3);
    }

    #[test]
    fn fd_fallback_matches_analytic() {
        let f = FnSampler::new(1, |t: f64| CMatrix::from_element(1, 1, Complex::new(t.sin(), 0.0)), 2, 0.0);
        let d1 = f.derivative(0.5, 1).unwrap().into_entries()[(0, 0)].re;
        let d2 = f.derivative(0.5, 2).unwrap().into_entries()[(0, 0)].re;
        assert_relative_eq!(d1, 0.5f64.cos(), epsilon = 1e-10);
        assert_relative_eq!(d2, -0.5f64.sin(), epsilon = 1e-6);
        assert!(f.derivative(0.5, 3).is_err());
    }
}
