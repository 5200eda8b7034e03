//! Dense and tridiagonal eigensolvers, Krylov exponential action and small
//! interpolation/differentiation helpers.

use crate::scalar::{cast, modulus, phase, real, CMatrix, CVector, Real};
use nalgebra::{Complex, DMatrix, SymmetricEigen};

/// Eigenpairs of a hermitian matrix with eigenvalues in ascending order.
#[derive(Clone, Debug)]
pub struct HermitianEigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: CMatrix<T>,
}

impl<T: Real> HermitianEigen<T> {
    /// Diagonalizes `m`, which is assumed hermitian. Ties keep solver order.
    pub fn new(m: &CMatrix<T>) -> Self {
        let eig = SymmetricEigen::new(m.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let vectors = eig.eigenvectors.select_columns(order.iter());
        Self { values, vectors }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Returns `V f(Λ) V* v`.
    pub fn apply_fn(&self, f: impl Fn(T) -> Complex<T>, v: &CVector<T>) -> CVector<T> {
        let mut w = self.vectors.ad_mul(v);
        for (c, &lam) in w.iter_mut().zip(&self.values) {
            *c *= f(lam);
        }
        &self.vectors * w
    }

    /// Returns the matrix `V f(Λ) V*`.
    pub fn matrix_fn(&self, f: impl Fn(T) -> Complex<T>) -> CMatrix<T> {
        let mut scaled = self.vectors.clone();
        for (j, &lam) in self.values.iter().enumerate() {
            let s = f(lam);
            for x in scaled.column_mut(j).iter_mut() {
                *x *= s;
            }
        }
        scaled * self.vectors.adjoint()
    }

    /// `exp(-i h A) v` for the diagonalized `A`.
    pub fn exp_action(&self, h: T, v: &CVector<T>) -> CVector<T> {
        self.apply_fn(|lam| phase(-h * lam), v)
    }
}

/// Frobenius norm of a complex matrix.
pub fn frobenius<T: Real>(m: &CMatrix<T>) -> T {
    m.iter()
        .fold(T::zero(), |acc, z| acc + z.norm_sqr())
        .sqrt()
}

/// Relative hermiticity defect ‖A − A*‖_F / ‖A‖_F (zero for the zero matrix).
pub fn hermitian_defect<T: Real>(m: &CMatrix<T>) -> T {
    let scale = frobenius(m);
    if scale == T::zero() {
        return T::zero();
    }
    frobenius(&(m - m.adjoint())) / scale
}

/// Hermitian part (A + A*)/2.
pub fn hermitian_part<T: Real>(m: &CMatrix<T>) -> CMatrix<T> {
    (m + m.adjoint()) * real(cast::<T>(0.5))
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &CMatrix<T>) -> T {
    if m.nrows() == 0 || m.ncols() == 0 {
        return T::zero();
    }
    m.singular_values()
        .iter()
        .fold(T::zero(), |acc, &s| if s > acc { s } else { acc })
}

/// Smallest singular value.
pub fn smallest_singular_value<T: Real>(m: &CMatrix<T>) -> T {
    let sv = m.singular_values();
    sv.iter()
        .fold(T::max_value().unwrap_or(T::one() / T::default_epsilon()), |acc, &s| {
            if s < acc {
                s
            } else {
                acc
            }
        })
}

/// `AB − BA`.
pub fn commutator<T: Real>(a: &CMatrix<T>, b: &CMatrix<T>) -> CMatrix<T> {
    a * b - b * a
}

/// Eigen-decomposition of a real symmetric tridiagonal matrix by the implicit
/// QL algorithm with Wilkinson-type shifts.
///
/// `diag` has length n, `off` length n−1. Eigenvalues are returned in
/// ascending order; eigenvectors (columns) only when requested.
pub fn tridiagonal_eigen<T: Real>(
    diag: &[T],
    off: &[T],
    want_vectors: bool,
) -> (Vec<T>, Option<DMatrix<T>>) {
    let n = diag.len();
    assert!(n == 0 || off.len() + 1 == n, "off-diagonal length must be n-1");
    let mut d = diag.to_vec();
    let mut e = vec![T::zero(); n];
    e[..n.saturating_sub(1)].copy_from_slice(off);
    let mut z = if want_vectors {
        Some(DMatrix::<T>::identity(n, n))
    } else {
        None
    };
    let eps = T::default_epsilon();
    let two = cast::<T>(2.0);
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= eps * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            assert!(iter <= 200, "tridiagonal QL failed to converge");
            let mut g = (d[l + 1] - d[l]) / (two * e[l]);
            let mut r = g.hypot(T::one());
            let sign_r = if g >= T::zero() { r } else { -r };
            g = d[m] - d[l] + e[l] / (g + sign_r);
            let (mut s, mut c, mut p) = (T::one(), T::one(), T::zero());
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == T::zero() {
                    d[i + 1] -= p;
                    e[m] = T::zero();
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + two * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                if let Some(z) = z.as_mut() {
                    let (mut left, mut right) = z.columns_range_pair_mut(i, i + 1);
                    for (zi, zi1) in left.iter_mut().zip(right.iter_mut()) {
                        let f = *zi1;
                        *zi1 = s * *zi + c * f;
                        *zi = c * *zi - s * f;
                    }
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = T::zero();
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].partial_cmp(&d[b]).unwrap_or(std::cmp::Ordering::Equal));
    let values = order.iter().map(|&i| d[i]).collect();
    let vectors = z.map(|z| z.select_columns(order.iter()));
    (values, vectors)
}

/// Number of eigenvalues below `x` of a symmetric tridiagonal matrix
/// (Sturm count from the LDLᵀ pivots).
pub fn tridiagonal_count_below<T: Real>(diag: &[T], off: &[T], x: T) -> usize {
    let tiny = T::default_epsilon() * T::default_epsilon();
    let mut count = 0;
    let mut q = T::one();
    for i in 0..diag.len() {
        q = if i == 0 {
            diag[0] - x
        } else {
            diag[i] - x - off[i - 1] * off[i - 1] / q
        };
        if q == T::zero() {
            q = -tiny;
        }
        if q < T::zero() {
            count += 1;
        }
    }
    count
}

/// The `count` smallest eigenvalues of a symmetric tridiagonal matrix by
/// Sturm bisection, ascending, to near machine precision.
pub fn tridiagonal_lowest_eigenvalues<T: Real>(diag: &[T], off: &[T], count: usize) -> Vec<T> {
    let n = diag.len();
    let count = count.min(n);
    let radius = |i: usize| {
        let a = if i > 0 { off[i - 1].abs() } else { T::zero() };
        let b = if i + 1 < n { off[i].abs() } else { T::zero() };
        a + b
    };
    let mut lo_all = diag[0] - radius(0);
    let mut hi_all = diag[0] + radius(0);
    for i in 1..n {
        lo_all = lo_all.min(diag[i] - radius(i));
        hi_all = hi_all.max(diag[i] + radius(i));
    }
    let eps = T::default_epsilon();
    let mut out = Vec::with_capacity(count);
    let mut floor = lo_all;
    for k in 0..count {
        let (mut lo, mut hi) = (floor, hi_all);
        for _ in 0..256 {
            let mid = (lo + hi) * cast(0.5);
            if mid <= lo || mid >= hi {
                break;
            }
            if tridiagonal_count_below(diag, off, mid) > k {
                hi = mid;
            } else {
                lo = mid;
            }
            if hi - lo <= eps * cast::<T>(2.0) * (lo.abs().max(hi.abs())) {
                break;
            }
        }
        // clusters below the bisection resolution must not come out unordered
        let value = out.last().map_or((lo + hi) * cast(0.5), |&prev: &T| prev.max((lo + hi) * cast(0.5)));
        out.push(value);
        floor = lo;
    }
    out
}

/// Eigenvectors of a symmetric tridiagonal matrix for the given (accurate)
/// eigenvalues, by inverse iteration with partial pivoting. Vectors whose
/// eigenvalues are close are re-orthogonalized.
pub fn tridiagonal_inverse_iteration<T: Real>(diag: &[T], off: &[T], values: &[T]) -> DMatrix<T> {
    let n = diag.len();
    let scale = diag
        .iter()
        .map(|x| x.abs())
        .chain(off.iter().map(|x| x.abs() * cast(2.0)))
        .fold(T::one(), |a, b| if b > a { b } else { a });
    let eps = T::default_epsilon();
    let cluster_tol = scale * cast(1e-7);
    let mut out = DMatrix::<T>::zeros(n, values.len());
    for (col, &lam) in values.iter().enumerate() {
        let shift = lam + scale * eps * cast(4.0);
        let lu = TridiagLu::new(diag, off, shift, scale * eps);
        let mut x: Vec<T> = (0..n)
            .map(|i| T::one() + cast::<T>(((i * 7919 + col * 104729) % 1013) as f64 / 1013.0))
            .collect();
        for _ in 0..3 {
            x = lu.solve(&x);
            for prev in (0..col).rev() {
                if (values[prev] - lam).abs() > cluster_tol {
                    break;
                }
                let dot = (0..n).fold(T::zero(), |acc, i| acc + out[(i, prev)] * x[i]);
                for (i, xi) in x.iter_mut().enumerate() {
                    *xi -= dot * out[(i, prev)];
                }
            }
            let norm = x.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
            for xi in x.iter_mut() {
                *xi /= norm;
            }
        }
        // Fix the sign so that the largest component is positive.
        let (imax, _) = x.iter().enumerate().fold((0, T::zero()), |acc, (i, &v)| {
            if v.abs() > acc.1 {
                (i, v.abs())
            } else {
                acc
            }
        });
        let sign = if x[imax] < T::zero() { -T::one() } else { T::one() };
        for (i, &v) in x.iter().enumerate() {
            out[(i, col)] = v * sign;
        }
    }
    out
}

/// LU factorization with partial pivoting of `T − shift·I` for tridiagonal T.
struct TridiagLu<T: Real> {
    l: Vec<T>,
    u0: Vec<T>,
    u1: Vec<T>,
    u2: Vec<T>,
    swap: Vec<bool>,
}

impl<T: Real> TridiagLu<T> {
    fn new(diag: &[T], off: &[T], shift: T, tiny: T) -> Self {
        let n = diag.len();
        let mut u0: Vec<T> = diag.iter().map(|&d| d - shift).collect();
        let mut u1: Vec<T> = off.to_vec();
        u1.push(T::zero());
        let mut u2 = vec![T::zero(); n];
        let mut l = vec![T::zero(); n];
        let mut swap = vec![false; n];
        let mut sub: Vec<T> = off.to_vec();
        sub.push(T::zero());
        for i in 0..n.saturating_sub(1) {
            if sub[i].abs() > u0[i].abs() {
                swap[i] = true;
                // swap rows i and i+1
                let (a0, a1, a2) = (u0[i], u1[i], u2[i]);
                u0[i] = sub[i];
                u1[i] = u0[i + 1];
                u2[i] = u1[i + 1];
                let factor = a0 / u0[i];
                l[i] = factor;
                u0[i + 1] = a1 - factor * u1[i];
                u1[i + 1] = a2 - factor * u2[i];
            } else {
                let piv = if u0[i] == T::zero() { tiny } else { u0[i] };
                u0[i] = piv;
                let factor = sub[i] / piv;
                l[i] = factor;
                u0[i + 1] -= factor * u1[i];
            }
        }
        if n > 0 && u0[n - 1] == T::zero() {
            u0[n - 1] = tiny;
        }
        Self { l, u0, u1, u2, swap }
    }

    fn solve(&self, b: &[T]) -> Vec<T> {
        let n = b.len();
        let mut y = b.to_vec();
        for i in 0..n.saturating_sub(1) {
            if self.swap[i] {
                y.swap(i, i + 1);
            }
            let yi = y[i];
            y[i + 1] -= self.l[i] * yi;
        }
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut acc = y[i];
            if i + 1 < n {
                acc -= self.u1[i] * x[i + 1];
            }
            if i + 2 < n {
                acc -= self.u2[i] * x[i + 2];
            }
            x[i] = acc / self.u0[i];
        }
        x
    }
}

/// Outcome of a Krylov exponential action.
pub struct KrylovStep<T: Real> {
    pub vector: CVector<T>,
    pub dimension: usize,
}

/// Computes `exp(−i h A) v` by the Lanczos process with full
/// re-orthogonalization. Returns `None` when `max_dim` iterations do not reach
/// the requested tolerance; callers then split the step.
pub fn lanczos_exp_action<T: Real>(
    apply: &dyn Fn(&CVector<T>) -> CVector<T>,
    v: &CVector<T>,
    h: T,
    tol: T,
    max_dim: usize,
) -> Option<KrylovStep<T>> {
    let n = v.len();
    let beta0 = v.norm();
    if beta0 == T::zero() {
        return Some(KrylovStep { vector: v.clone(), dimension: 0 });
    }
    let max_dim = max_dim.min(n).max(1);
    let mut basis: Vec<CVector<T>> = vec![v / real(beta0)];
    let mut alphas: Vec<T> = Vec::new();
    let mut betas: Vec<T> = Vec::new();
    let breakdown = T::default_epsilon() * cast(64.0);
    loop {
        let j = basis.len() - 1;
        let mut w = apply(&basis[j]);
        let alpha = basis[j].dotc(&w).re;
        alphas.push(alpha);
        for _pass in 0..2 {
            for q in &basis {
                let c = q.dotc(&w);
                w.axpy(-c, q, Complex::new(T::one(), T::zero()));
            }
        }
        let beta = w.norm();
        let m = alphas.len();
        let (theta, z) = tridiagonal_eigen(&alphas, &betas, true);
        let z = z.expect("vectors requested");
        // y = Z exp(−i h Θ) Zᵀ e_1
        let mut y = vec![Complex::new(T::zero(), T::zero()); m];
        for k in 0..m {
            let coeff = phase(-h * theta[k]) * real(z[(0, k)]);
            for (i, yi) in y.iter_mut().enumerate() {
                *yi += coeff * real(z[(i, k)]);
            }
        }
        let err = beta * modulus(y[m - 1]) * beta0;
        let exhausted = beta <= breakdown * (alpha.abs() + T::one()) || m >= n;
        if err <= tol || exhausted {
            let mut out = CVector::<T>::zeros(n);
            for (q, &c) in basis.iter().zip(&y) {
                out.axpy(c * real(beta0), q, Complex::new(T::one(), T::zero()));
            }
            return Some(KrylovStep { vector: out, dimension: m });
        }
        if m >= max_dim {
            return None;
        }
        betas.push(beta);
        basis.push(w / real(beta));
    }
}

/// Chebyshev–Lobatto nodes on [a, b] in increasing order.
pub fn chebyshev_nodes<T: Real>(a: T, b: T, count: usize) -> Vec<T> {
    assert!(count >= 2, "need at least two nodes");
    let half = cast::<T>(0.5);
    let mid = (a + b) * half;
    let rad = (b - a) * half;
    (0..count)
        .map(|k| {
            let theta = T::pi() * cast::<T>((count - 1 - k) as f64) / cast::<T>((count - 1) as f64);
            mid + rad * theta.cos()
        })
        .collect()
}

/// Barycentric weights for Chebyshev–Lobatto nodes (ordering-invariant up to sign).
pub fn chebyshev_weights<T: Real>(count: usize) -> Vec<T> {
    (0..count)
        .map(|k| {
            let mut w = if k % 2 == 0 { T::one() } else { -T::one() };
            if k == 0 || k + 1 == count {
                w *= cast(0.5);
            }
            w
        })
        .collect()
}

/// Barycentric interpolation coefficients at `t` for the given nodes.
pub fn barycentric_coefficients<T: Real>(nodes: &[T], weights: &[T], t: T) -> Vec<T> {
    if let Some(hit) = nodes.iter().position(|&x| x == t) {
        let mut c = vec![T::zero(); nodes.len()];
        c[hit] = T::one();
        return c;
    }
    let raw: Vec<T> = nodes
        .iter()
        .zip(weights)
        .map(|(&x, &w)| w / (t - x))
        .collect();
    let total = raw.iter().fold(T::zero(), |a, &b| a + b);
    raw.into_iter().map(|r| r / total).collect()
}

/// Fourth-order central difference from samples at t±h and t±2h.
#[inline]
pub fn richardson_central<T: Real>(
    f_m2: &CMatrix<T>,
    f_m1: &CMatrix<T>,
    f_p1: &CMatrix<T>,
    f_p2: &CMatrix<T>,
    h: T,
) -> CMatrix<T> {
    let eight = real(cast::<T>(8.0));
    ((f_p1 - f_m1) * eight - (f_p2 - f_m2)) / real(cast::<T>(12.0) * h)
}
