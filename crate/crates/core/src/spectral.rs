//! The Hilbert scale of a positive reference operator H in truncated spectral
//! coordinates, with operator-norm and commutator diagnostics on that scale.

use crate::error::{Error, Result};
use crate::linalg::{self, frobenius, hermitian_defect, HermitianEigen};
use crate::scalar::{cast, hermitian_tolerance, imag_unit, real, to_f64, CMatrix, CVector, Real};
use nalgebra::Complex;
use serde::Serialize;

/// Spectrum of the reference operator H together with the truncation data.
#[derive(Clone, Debug, Serialize)]
pub struct SpectralModel<T: Real> {
    eigenvalues: Vec<T>,
    observe_dim: usize,
    label: String,
}

impl<T: Real> SpectralModel<T> {
    /// Builds a model whose norms are trusted on the full truncation.
    pub fn new(eigenvalues: Vec<T>, label: impl Into<String>) -> Result<Self> {
        let observe_dim = eigenvalues.len();
        Self::with_observe_dim(eigenvalues, observe_dim, label)
    }

    pub fn with_observe_dim(
        eigenvalues: Vec<T>,
        observe_dim: usize,
        label: impl Into<String>,
    ) -> Result<Self> {
        if eigenvalues.is_empty() {
            return Err(Error::InvalidInput("empty spectrum".into()));
        }
        if let Some(bad) = eigenvalues.iter().find(|&&x| !(x > T::zero())) {
            return Err(Error::InvalidInput(format!(
                "reference operator must be positive, found eigenvalue {}",
                to_f64(*bad)
            )));
        }
        if eigenvalues.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidInput("eigenvalues must be nondecreasing".into()));
        }
        if observe_dim == 0 || observe_dim > eigenvalues.len() {
            return Err(Error::InvalidInput(format!(
                "observe_dim {observe_dim} outside 1..={}",
                eigenvalues.len()
            )));
        }
        Ok(Self {
            eigenvalues,
            observe_dim,
            label: label.into(),
        })
    }

    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn observe_dim(&self) -> usize {
        self.observe_dim
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Same spectrum with a different trusted dimension.
    pub fn observed(&self, observe_dim: usize) -> Result<Self> {
        Self::with_observe_dim(self.eigenvalues.clone(), observe_dim, self.label.clone())
    }

    /// H itself as a diagonal operator.
    pub fn h_operator(&self) -> OperatorMatrix<T> {
        OperatorMatrix::diagonal(&self.eigenvalues)
    }

    /// H^p as a diagonal operator.
    pub fn h_power(&self, p: T) -> OperatorMatrix<T> {
        let vals: Vec<T> = self.eigenvalues.iter().map(|&l| l.powf(p)).collect();
        OperatorMatrix::diagonal(&vals)
    }
}

/// A complex matrix in the H-eigenbasis. The hermitian flag is always
/// truthful: it is computed from the entries.
#[derive(Clone, Debug)]
pub struct OperatorMatrix<T: Real> {
    entries: CMatrix<T>,
    hermitian: bool,
}

impl<T: Real> OperatorMatrix<T> {
    pub fn new(entries: CMatrix<T>) -> Self {
        assert!(entries.is_square(), "operators must be square");
        let hermitian = hermitian_defect(&entries) <= hermitian_tolerance::<T>();
        Self { entries, hermitian }
    }

    /// Wraps a matrix that must be hermitian.
    pub fn hermitian(entries: CMatrix<T>) -> Result<Self> {
        let op = Self::new(entries);
        if op.hermitian {
            Ok(op)
        } else {
            Err(Error::NotHermitian {
                context: "operator construction".into(),
                defect: to_f64(hermitian_defect(&op.entries)),
            })
        }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let n = values.len();
        let mut m = CMatrix::<T>::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = real(v);
        }
        Self { entries: m, hermitian: true }
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            entries: CMatrix::zeros(n, n),
            hermitian: true,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            entries: CMatrix::identity(n, n),
            hermitian: true,
        }
    }

    pub fn entries(&self) -> &CMatrix<T> {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix<T> {
        self.entries
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    /// ‖A − A*‖_F / ‖A‖_F.
    pub fn hermitian_defect(&self) -> T {
        hermitian_defect(&self.entries)
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn frobenius(&self) -> T {
        frobenius(&self.entries)
    }

    /// Largest singular value on the full truncation.
    pub fn spectral_norm(&self) -> T {
        linalg::spectral_norm(&self.entries)
    }
}

/// Coefficients of a state in the H-eigenbasis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T: Real> {
    pub coords: CVector<T>,
}

impl<T: Real> StateVector<T> {
    pub fn new(coords: CVector<T>) -> Self {
        Self { coords }
    }

    /// The j-th basis vector (0-based).
    pub fn basis(dim: usize, j: usize) -> Self {
        let mut coords = CVector::zeros(dim);
        coords[j] = real(T::one());
        Self { coords }
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    /// Base (ℓ²) norm over all coefficients.
    pub fn norm(&self) -> T {
        self.coords.norm()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > T::zero() {
            self.coords /= real(n);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.coords.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// A time-dependent operator t ↦ matrix in the H-eigenbasis.
pub trait OperatorSampler<T: Real>: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: T) -> OperatorMatrix<T>;

    /// ∂_t^order of the operator; order 0 coincides with `eval`.
    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>>;

    /// Highest available derivative order.
    fn max_order(&self) -> usize;

    /// Declared relative order ν: ‖H^p V H^{-p-ν}‖ bounded.
    fn nu(&self) -> T {
        T::zero()
    }

    /// Applies the operator at time t to a vector.
    fn apply(&self, t: T, v: &CVector<T>) -> CVector<T> {
        self.eval(t).entries() * v
    }

    fn is_time_independent(&self) -> bool {
        false
    }

    /// Cached eigen-decomposition for time-independent generators.
    fn frozen_eigen(&self) -> Option<&HermitianEigen<T>> {
        None
    }

    /// Whether matrix-free Krylov stepping is preferable to dense eigensolves.
    fn prefers_krylov(&self) -> bool {
        false
    }
}

pub(crate) fn check_order(requested: usize, max_order: usize) -> Result<()> {
    if requested > max_order {
        Err(Error::DerivativeUnavailable {
            requested,
            max_order,
        })
    } else {
        Ok(())
    }
}

/// ‖ψ‖_k = (Σ_{j ≤ observe_dim} λ_j^k |ψ_j|²)^{1/2}.
pub fn sobolev_norm<T: Real>(model: &SpectralModel<T>, psi: &StateVector<T>, k: T) -> Result<T> {
    if k < T::zero() {
        return Err(Error::NegativeSobolevIndex(to_f64(k)));
    }
    let n = model.observe_dim.min(psi.dim());
    let sum = (0..n).fold(T::zero(), |acc, j| {
        let w = if k == T::zero() {
            T::one()
        } else {
            model.eigenvalues[j].powf(k)
        };
        acc + w * psi.coords[j].norm_sqr()
    });
    Ok(sum.sqrt())
}

/// Largest singular value of D^a A D^{-b}, D = diag(λ), on the observed block.
pub fn scale_operator_norm<T: Real>(model: &SpectralModel<T>, a: &OperatorMatrix<T>, pa: T, pb: T) -> T {
    let n = model.observe_dim.min(a.dim());
    let lam = &model.eigenvalues;
    let block = CMatrix::<T>::from_fn(n, n, |i, j| {
        a.entries[(i, j)] * real(lam[i].powf(pa) * lam[j].powf(-pb))
    });
    linalg::spectral_norm(&block)
}

/// AB − BA.
pub fn commutator<T: Real>(a: &OperatorMatrix<T>, b: &OperatorMatrix<T>) -> OperatorMatrix<T> {
    assert_eq!(a.dim(), b.dim(), "commutator of operators with different dimensions");
    OperatorMatrix::new(linalg::commutator(&a.entries, &b.entries))
}

/// One row of [`commutator_tau_scan`].
#[derive(Clone, Debug, Serialize)]
pub struct TauScanRow<T: Real> {
    pub tau: T,
    /// max_t ‖[L(t),H]H^{−τ}‖.
    pub commutator_norm: T,
    /// (k, max_t ‖[L(t),H^k]H^{−k+θ}‖) with θ = 1 − τ.
    pub power_norms: Vec<(u32, T)>,
}

/// For each τ, the sup over the sampled times of ‖[L(t),H]H^{−τ}‖ and of
/// ‖[L(t),H^k]H^{−k+1−τ}‖ for the requested integer powers k.
pub fn commutator_tau_scan<T: Real>(
    model: &SpectralModel<T>,
    l: &dyn OperatorSampler<T>,
    taus: &[T],
    times: &[T],
    powers: &[u32],
) -> Result<Vec<TauScanRow<T>>> {
    if times.is_empty() {
        return Err(Error::InvalidInput("commutator scan needs at least one time".into()));
    }
    let h = model.h_operator();
    let h_powers: Vec<(u32, OperatorMatrix<T>)> = powers
        .iter()
        .map(|&k| (k, model.h_power(cast(k as f64))))
        .collect();
    let mut rows: Vec<TauScanRow<T>> = taus
        .iter()
        .map(|&tau| TauScanRow {
            tau,
            commutator_norm: T::zero(),
            power_norms: powers.iter().map(|&k| (k, T::zero())).collect(),
        })
        .collect();
    for &t in times {
        let lt = l.eval(t);
        let c1 = commutator(&lt, &h);
        let ck: Vec<OperatorMatrix<T>> = h_powers.iter().map(|(_, hk)| commutator(&lt, hk)).collect();
        for row in rows.iter_mut() {
            let v = scale_operator_norm(model, &c1, T::zero(), row.tau);
            if v > row.commutator_norm {
                row.commutator_norm = v;
            }
            let theta = T::one() - row.tau;
            for ((k, best), c) in row.power_norms.iter_mut().zip(&ck) {
                let v = scale_operator_norm(model, c, T::zero(), cast::<T>(*k as f64) - theta);
                if v > *best {
                    *best = v;
                }
            }
        }
    }
    Ok(rows)
}

/// ∂_{(t,L)}A = ∂_tA + i[L, A] at time t.
pub fn heisenberg_derivative<T: Real>(
    l: &OperatorMatrix<T>,
    a: &dyn OperatorSampler<T>,
    t: T,
) -> Result<OperatorMatrix<T>> {
    if a.max_order() == 0 {
        return Err(Error::DerivativeUnavailable {
            requested: 1,
            max_order: 0,
        });
    }
    let da = a.derivative(t, 1)?;
    let at = a.eval(t);
    let comm = linalg::commutator(&l.entries, &at.entries);
    Ok(OperatorMatrix::new(da.entries + comm * imag_unit::<T>()))
}

/// ∂_{(t,L)} applied to explicit matrices: `da + i[L, A]`.
pub fn heisenberg_from_parts<T: Real>(l: &CMatrix<T>, a: &CMatrix<T>, da: &CMatrix<T>) -> CMatrix<T> {
    da + linalg::commutator(l, a) * Complex::new(T::zero(), T::one())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ConstantSampler, FnSampler};
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    fn model14() -> SpectralModel<f64> {
        SpectralModel::new(vec![1.0, 4.0], "toy").unwrap()
    }

    #[test]
    fn sobolev_norm_two_level_example() {
        let s = 1.0 / 2f64.sqrt();
        let psi = StateVector::new(DVector::from_vec(vec![c(s, 0.0), c(s, 0.0)]));
        let n = sobolev_norm(&model14(), &psi, 1.0).unwrap();
        assert_relative_eq!(n, (2.5f64).sqrt(), epsilon = 1e-14);
        assert_relative_eq!(sobolev_norm(&model14(), &psi, 0.0).unwrap(), 1.0, epsilon = 1e-14);
    }

    #[test]
    fn sobolev_norm_of_basis_vector() {
        let m = model14();
        let psi = StateVector::basis(2, 1);
        assert_relative_eq!(sobolev_norm(&m, &psi, 3.0).unwrap(), 8.0, epsilon = 1e-12);
    }

    #[test]
    fn negative_index_rejected() {
        let psi = StateVector::basis(2, 0);
        assert!(matches!(
            sobolev_norm(&model14(), &psi, -1.0),
            Err(Error::NegativeSobolevIndex(_))
        ));
    }

    #[test]
    fn sobolev_norm_ignores_unobserved_modes() {
        let m = SpectralModel::with_observe_dim(vec![1.0, 2.0, 3.0], 2, "t").unwrap();
        let psi = StateVector::basis(3, 2);
        assert_eq!(sobolev_norm(&m, &psi, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn model_validation() {
        assert!(SpectralModel::new(vec![0.0, 1.0], "x").is_err());
        assert!(SpectralModel::new(vec![2.0, 1.0], "x").is_err());
        assert!(SpectralModel::with_observe_dim(vec![1.0, 2.0], 3, "x").is_err());
    }

    #[test]
    fn scale_norm_examples() {
        let m = model14();
        let id = OperatorMatrix::identity(2);
        assert_relative_eq!(scale_operator_norm(&m, &id, 0.7, 0.7), 1.0, epsilon = 1e-12);
        assert_relative_eq!(scale_operator_norm(&m, &id, 1.0, 0.0), 4.0, epsilon = 1e-12);
        let mut a = CMatrix::zeros(2, 2);
        a[(0, 1)] = c(1.0, 0.0);
        let a = OperatorMatrix::new(a);
        assert_relative_eq!(scale_operator_norm(&m, &a, 1.0, 1.0), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn commutator_with_diagonal_h() {
        let m = SpectralModel::new(vec![1.0, 2.0, 5.0], "t").unwrap();
        let b = OperatorMatrix::new(CMatrix::from_fn(3, 3, |i, j| c((i + 2 * j) as f64, i as f64 - j as f64)));
        let comm = commutator(&m.h_operator(), &b);
        let lam = m.eigenvalues();
        for i in 0..3 {
            for j in 0..3 {
                let expected = b.entries()[(i, j)] * (lam[i] - lam[j]);
                assert!((comm.entries()[(i, j)] - expected).norm() < 1e-12);
            }
        }
        let d1 = OperatorMatrix::diagonal(&[1.0, 3.0, 4.0]);
        assert_eq!(commutator(&d1, &m.h_operator()).frobenius(), 0.0);
    }

    #[test]
    fn tau_scan_trivial_cases() {
        let m = SpectralModel::new((1..=8).map(|x| x as f64).collect(), "t").unwrap();
        let l = ConstantSampler::new(m.h_operator());
        let rows = commutator_tau_scan(&m, &l, &[0.0, 0.5, 1.0], &[0.0, 1.0], &[1, 2]).unwrap();
        for r in rows {
            assert_eq!(r.commutator_norm, 0.0);
            assert!(r.power_norms.iter().all(|(_, v)| *v == 0.0));
        }
        assert!(commutator_tau_scan(&m, &l, &[0.0], &[], &[]).is_err());
    }

    #[test]
    fn tau_scan_matches_brute_force_on_torus_like_model() {
        // H = diag(n²) on n = 1..=64 (shifted away from zero), V = all ones.
        let n = 64;
        let lam: Vec<f64> = (1..=n).map(|k| (k * k) as f64).collect();
        let m = SpectralModel::new(lam.clone(), "torus-ones").unwrap();
        let ones = OperatorMatrix::new(CMatrix::from_element(n, n, c(1.0, 0.0)));
        let l = ConstantSampler::new(ones);
        let rows = commutator_tau_scan(&m, &l, &[1.0], &[0.0], &[]).unwrap();
        // brute force: entries (λ_j − λ_i) λ_j^{-1}, largest singular value via power iteration
        let a = DMatrix::<f64>::from_fn(n, n, |i, j| (lam[j] - lam[i]) / lam[j]);
        let ata = a.transpose() * &a;
        let mut v = DVector::<f64>::from_element(n, 1.0);
        let mut est = 0.0;
        for _ in 0..5000 {
            let w = &ata * &v;
            est = w.norm();
            v = w / est;
        }
        assert_relative_eq!(rows[0].commutator_norm, est.sqrt(), epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn heisenberg_derivative_rotating_projector() {
        let e = 3.0;
        let theta = |t: f64| 0.4 * t + 0.3 * t * t;
        let dtheta = |t: f64| 0.4 + 0.6 * t;
        let proj = move |t: f64| {
            let (s, co) = theta(t).sin_cos();
            CMatrix::from_row_slice(2, 2, &[c(co * co, 0.0), c(co * s, 0.0), c(co * s, 0.0), c(s * s, 0.0)])
        };
        let sampler = FnSampler::new(2, proj, 4, 0.0);
        let l = OperatorMatrix::diagonal(&[0.0, e]);
        let t = 0.8;
        let got = heisenberg_derivative(&l, &sampler, t).unwrap();
        // Closed form: θ'·[[−sin2θ, cos2θ],[cos2θ, sin2θ]] + i[L, P].
        let (s2, c2) = (2.0 * theta(t)).sin_cos();
        let (s, co) = theta(t).sin_cos();
        let d = dtheta(t);
        let comm01 = c(0.0, 1.0) * c(-e * co * s, 0.0);
        let comm10 = c(0.0, 1.0) * c(e * co * s, 0.0);
        let expect = CMatrix::from_row_slice(
            2,
            2,
            &[c(-d * s2, 0.0), c(d * c2, 0.0) + comm01, c(d * c2, 0.0) + comm10, c(d * s2, 0.0)],
        );
        assert!((got.entries() - expect).norm() < 1e-8);
    }

    #[test]
    fn heisenberg_trivial_cases() {
        let l = OperatorMatrix::diagonal(&[1.0, 2.0]);
        let a = ConstantSampler::new(OperatorMatrix::diagonal(&[3.0, -1.0]));
        assert!(heisenberg_derivative(&l, &a, 0.3).unwrap().frobenius() < 1e-15);
        let f = FnSampler::with_derivative(
            2,
            |t: f64| CMatrix::identity(2, 2) * c(t.sin(), 0.0),
            |t: f64, k: usize| {
                let v = match k % 4 {
                    0 => t.sin(),
                    1 => t.cos(),
                    2 => -t.sin(),
                    _ => -t.cos(),
                };
                CMatrix::identity(2, 2) * c(v, 0.0)
            },
            8,
            0.0,
        );
        let got = heisenberg_derivative(&l, &f, 0.2).unwrap();
        assert!((got.entries() - CMatrix::identity(2, 2) * c(0.2f64.cos(), 0.0)).norm() < 1e-14);
        let frozen = FnSampler::new(2, |_t: f64| CMatrix::identity(2, 2), 0, 0.0);
        assert!(matches!(
            heisenberg_derivative(&l, &frozen, 0.0),
            Err(Error::DerivativeUnavailable { .. })
        ));
    }

    #[test]
    fn f32_instantiation() {
        let m = SpectralModel::<f32>::new(vec![1.0, 4.0], "f32").unwrap();
        let psi = StateVector::<f32>::basis(2, 1);
        assert!((sobolev_norm(&m, &psi, 1.0).unwrap() - 2.0).abs() < 1e-6);
        let id = OperatorMatrix::<f32>::identity(2);
        assert!((scale_operator_norm(&m, &id, 1.0, 0.0) - 4.0).abs() < 1e-5);
    }

    fn arb_matrix(n: usize) -> impl Strategy<Value = CMatrix<f64>> {
        proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), n * n)
            .prop_map(move |v| CMatrix::from_iterator(n, n, v.into_iter().map(|(a, b)| c(a, b))))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn sobolev_monotone_in_k(coef in proptest::collection::vec(-1.0f64..1.0, 6), k in 0.0f64..3.0, dk in 0.0f64..2.0) {
            let m = SpectralModel::new(vec![1.0, 1.5, 2.0, 4.0, 9.0, 20.0], "mono").unwrap();
            let psi = StateVector::new(DVector::from_iterator(6, coef.into_iter().map(|x| c(x, 0.5 * x))));
            prop_assert!(sobolev_norm(&m, &psi, k).unwrap() <= sobolev_norm(&m, &psi, k + dk).unwrap() * (1.0 + 1e-14));
        }

        #[test]
        fn scale_norm_submultiplicative(a in arb_matrix(5), b in arb_matrix(5), pa in -1.0f64..2.0, pb in -1.0f64..2.0, pc in -1.0f64..2.0) {
            let m = SpectralModel::new(vec![1.0, 2.0, 3.5, 7.0, 11.0], "sub").unwrap();
            let ao = OperatorMatrix::new(a.clone());
            let bo = OperatorMatrix::new(b.clone());
            let ab = OperatorMatrix::new(a * b);
            let lhs = scale_operator_norm(&m, &ab, pa, pc);
            let rhs = scale_operator_norm(&m, &ao, pa, pb) * scale_operator_norm(&m, &bo, pb, pc);
            prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-12);
        }

        #[test]
        fn commutator_antisymmetric(a in arb_matrix(4), b in arb_matrix(4)) {
            let ao = OperatorMatrix::new(a);
            let bo = OperatorMatrix::new(b);
            let s = commutator(&ao, &bo).entries() + commutator(&bo, &ao).entries();
            prop_assert!(s.iter().all(|z| z.norm() == 0.0));
        }

        #[test]
        fn heisenberg_leibniz(a0 in arb_matrix(3), a1 in arb_matrix(3), b0 in arb_matrix(3), b1 in arb_matrix(3), lm in arb_matrix(3), t in -1.0f64..1.0) {
            let l = OperatorMatrix::new(linalg::hermitian_part(&lm));
            let mk = |m0: CMatrix<f64>, m1: CMatrix<f64>| {
                let (m0b, m1b) = (m0.clone(), m1.clone());
                FnSampler::with_derivative(3,
                    move |t: f64| &m0 + &m1 * c(t, 0.0) + &m1 * c(0.5 * t * t, 0.0),
                    move |t: f64, k: usize| match k {
                        0 => &m0b + &m1b * c(t + 0.5 * t * t, 0.0),
                        1 => &m1b * c(1.0 + t, 0.0),
                        2 => m1b.clone(),
                        _ => CMatrix::zeros(3, 3),
                    }, 4, 0.0)
            };
            let a = mk(a0, a1);
            let b = mk(b0, b1);
            let (a_t, b_t) = (a.eval(t).into_entries(), b.eval(t).into_entries());
            let da = a.derivative(t, 1).unwrap().into_entries();
            let db = b.derivative(t, 1).unwrap().into_entries();
            let lhs = heisenberg_from_parts(l.entries(), &(&a_t * &b_t), &(&da * &b_t + &a_t * &db));
            let rhs = heisenberg_from_parts(l.entries(), &a_t, &da) * &b_t + &a_t * heisenberg_from_parts(l.entries(), &b_t, &db);
            let scale = 1.0 + lhs.norm();
            prop_assert!((lhs - rhs).norm() <= 1e-10 * scale);
        }
    }
}
