//! Finite-difference models on [−R, R] with Dirichlet boundary: the harmonic
//! oscillator with the dilation generator, and anharmonic oscillators
//! −d²/dx² + x^{2k} + p(x) driven by polynomial potentials.

use super::{Check, ValidationReport};
use crate::error::{Error, Result};
use crate::linalg::{tridiagonal_eigen, tridiagonal_inverse_iteration, tridiagonal_lowest_eigenvalues, HermitianEigen};
use crate::sampler::{ConstantSampler, Envelope, ModulatedSampler, TermMatrix};
use crate::scalar::{cast, cplx, real, to_f64, CMatrix, CVector, Real};
use crate::spectral::{OperatorMatrix, SpectralModel, StateVector};
use crate::stats::line_fit;
use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Uniform interior grid x_i = −R + (i+1)h, h = 2R/(points+1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RealLineGrid {
    pub points: usize,
    pub radius: f64,
}

impl RealLineGrid {
    pub fn new(points: usize, radius: f64) -> Self {
        Self { points, radius }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < 16 || !(self.radius > 0.0) {
            return Err(Error::ModelValidation(format!(
                "grid needs at least 16 points and a positive radius, got {} on [-{}, {}]",
                self.points, self.radius, self.radius
            )));
        }
        Ok(())
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.radius / (self.points + 1) as f64
    }

    pub fn nodes<T: Real>(&self) -> Vec<T> {
        let h = self.spacing();
        (0..self.points).map(|i| cast(-self.radius + (i + 1) as f64 * h)).collect()
    }
}

/// Eigenbasis of a real-line H on the grid, with conversions between grid
/// functions and coordinates.
#[derive(Clone, Debug)]
pub struct GridBasis<T: Real> {
    pub nodes: Vec<T>,
    pub spacing: T,
    /// Columns are the discrete-L²-normalized eigenvectors.
    pub vectors: DMatrix<T>,
}

impl<T: Real> GridBasis<T> {
    /// Coordinates of the grid function f (sampled at the nodes) in the basis.
    pub fn to_state(&self, f: impl Fn(T) -> Complex<T>) -> StateVector<T> {
        let w = self.spacing.sqrt();
        let g: CVector<T> = CVector::from_iterator(self.nodes.len(), self.nodes.iter().map(|&x| f(x) * real(w)));
        StateVector::new(project(&self.vectors, &g))
    }

    /// Grid values of the function with the given coordinates.
    pub fn to_grid(&self, psi: &StateVector<T>) -> CVector<T> {
        let inv = T::one() / self.spacing.sqrt();
        let n = self.vectors.nrows();
        CVector::from_fn(n, |i, _| {
            let mut acc = Complex::new(T::zero(), T::zero());
            for (j, c) in psi.coords.iter().enumerate() {
                acc += *c * real(self.vectors[(i, j)]);
            }
            acc * real(inv)
        })
    }
}

fn project<T: Real>(v: &DMatrix<T>, g: &CVector<T>) -> CVector<T> {
    let re = DMatrix::from_iterator(g.len(), 1, g.iter().map(|z| z.re));
    let im = DMatrix::from_iterator(g.len(), 1, g.iter().map(|z| z.im));
    let (a, b) = (v.tr_mul(&re), v.tr_mul(&im));
    CVector::from_fn(v.ncols(), |j, _| cplx(a[(j, 0)], b[(j, 0)]))
}

/// Diagonal and off-diagonal of −d²/dx² + W(x) on the grid.
fn schrodinger_tridiagonal<T: Real>(nodes: &[T], h: T, potential: impl Fn(T) -> T) -> (Vec<T>, Vec<T>) {
    let inv = T::one() / (h * h);
    let diag = nodes.iter().map(|&x| inv * cast(2.0) + potential(x)).collect();
    let off = vec![-inv; nodes.len() - 1];
    (diag, off)
}

fn resolution_check(name: &str, lambda_max: f64, turning: f64, grid: &RealLineGrid) -> Result<()> {
    if turning > grid.radius / 1.2 {
        return Err(Error::GridUnderResolved(format!(
            "{name}: classical turning point {turning:.3} of the highest used level lies outside [-R/1.2, R/1.2] with R = {}",
            grid.radius
        )));
    }
    let kh = lambda_max.sqrt() * grid.spacing();
    if kh > 0.5 {
        return Err(Error::GridUnderResolved(format!(
            "{name}: highest level has sqrt(lambda)·h = {kh:.3} > 0.5; refine the grid"
        )));
    }
    Ok(())
}

/// The harmonic oscillator with the dilation generator L = (i/2)(xD + Dx).
pub struct DilationModel<T: Real> {
    pub model: SpectralModel<T>,
    pub generator: Arc<ConstantSampler<T>>,
    pub basis: GridBasis<T>,
    pub validation: ValidationReport,
}

impl<T: Real> DilationModel<T> {
    /// Closed-form flow (U(t,0)u)(x) = e^{t/2} u(eᵗx) sampled on the grid.
    pub fn exact_flow(&self, t: T, u: impl Fn(T) -> Complex<T>) -> CVector<T> {
        let scale = t.exp();
        let amp = (t * cast(0.5)).exp();
        CVector::from_iterator(self.basis.nodes.len(), self.basis.nodes.iter().map(|&x| u(scale * x) * real(amp)))
    }

    /// ‖∂_x U(t,0)u‖ = eᵗ‖∂_x u‖ for the closed-form flow.
    pub fn exact_derivative_norm(t: T, du_norm: T) -> T {
        t.exp() * du_norm
    }
}

/// Discretizes H = −d²/dx² + x² and L = (i/2)(xD + Dx) with central
/// differences. All grid modes are kept; `observe` limits the norms.
pub fn build_dilation_model<T: Real>(grid: &RealLineGrid, observe: usize, validate: usize) -> Result<DilationModel<T>> {
    grid.validate()?;
    let n = grid.points;
    if observe == 0 || observe > n || validate > observe {
        return Err(Error::ModelValidation(format!(
            "need 0 < validate <= observe <= points, got {validate}, {observe}, {n}"
        )));
    }
    let nodes: Vec<T> = grid.nodes();
    let h: T = cast(grid.spacing());
    let (hd, ho) = schrodinger_tridiagonal(&nodes, h, |x| x * x);
    let values = tridiagonal_lowest_eigenvalues(&hd, &ho, n);
    let vectors = tridiagonal_inverse_iteration(&hd, &ho, &values);
    let mut checks = Vec::new();
    let worst = (0..validate)
        .map(|j| (to_f64(values[j]) - (2 * j + 1) as f64).abs() / (2 * j + 1) as f64)
        .fold(0.0, f64::max);
    checks.push(Check::new("harmonic 2n+1 law", worst, 0.01));
    if worst > 0.01 {
        return Err(Error::GridUnderResolved(format!(
            "lowest {validate} oscillator levels deviate from 2n+1 by {:.3}%",
            100.0 * worst
        )));
    }
    // i·(antisymmetric tridiagonal) = S·(real symmetric tridiagonal)·S*, S = diag(iᵏ),
    // with off-diagonal −a_k/2, a_k = (x_k + x_{k+1})/(2h).
    let a: Vec<T> = nodes.windows(2).map(|w| (w[0] + w[1]) / (cast::<T>(2.0) * h)).collect();
    let sym_off: Vec<T> = a.iter().map(|&ak| -ak * cast(0.5)).collect();
    let (lvals, q) = tridiagonal_eigen(&vec![T::zero(); n], &sym_off, true);
    let q = q.expect("vectors requested");
    // W = Pᵀ S Q with S = diag(iᵏ): split S into real and imaginary parts.
    let (mut sq_re, mut sq_im) = (q.clone(), q);
    for k in 0..n {
        let (re, im) = match k % 4 {
            0 => (1.0, 0.0),
            1 => (0.0, 1.0),
            2 => (-1.0, 0.0),
            _ => (0.0, -1.0),
        };
        sq_re.row_mut(k).scale_mut(cast(re));
        sq_im.row_mut(k).scale_mut(cast(im));
    }
    let (w_re, w_im) = (vectors.tr_mul(&sq_re), vectors.tr_mul(&sq_im));
    let w = CMatrix::from_fn(n, n, |i, j| cplx(w_re[(i, j)], w_im[(i, j)]));
    // L in the H basis: Pᵀ L P with L_{k,k+1} = i a_k/2.
    let mut lp = CMatrix::<T>::zeros(n, n);
    for k in 0..n - 1 {
        let c = cplx(T::zero(), a[k] * cast(0.5));
        for j in 0..n {
            lp[(k, j)] += c * real(vectors[(k + 1, j)]);
            lp[(k + 1, j)] -= c * real(vectors[(k, j)]);
        }
    }
    let (lp_re, lp_im) = (lp.map(|z| z.re), lp.map(|z| z.im));
    let (l_re, l_im) = (vectors.tr_mul(&lp_re), vectors.tr_mul(&lp_im));
    let l_h = CMatrix::from_fn(n, n, |i, j| cplx(l_re[(i, j)], l_im[(i, j)]));
    let op = OperatorMatrix::hermitian(l_h)?;
    let eigen = HermitianEigen { values: lvals, vectors: w };
    let model = SpectralModel::with_observe_dim(values, observe, "dilation_harmonic")?;
    Ok(DilationModel {
        model,
        generator: Arc::new(ConstantSampler::with_eigen(op, eigen)),
        basis: GridBasis {
            nodes,
            spacing: h,
            vectors,
        },
        validation: ValidationReport { checks },
    })
}

/// A polynomial in x times a time envelope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialTerm {
    /// Coefficients of 1, x, x², … .
    pub coefficients: Vec<f64>,
    pub envelope: Envelope,
}

impl PolynomialTerm {
    pub fn degree(&self) -> usize {
        self.coefficients.iter().rposition(|&c| c != 0.0).unwrap_or(0)
    }

    fn eval<T: Real>(&self, x: T) -> T {
        self.coefficients.iter().rev().fold(T::zero(), |acc, &c| acc * x + cast(c))
    }
}

/// V(t, x) = Σ envelope_i(t)·poly_i(x).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolynomialDrive {
    pub terms: Vec<PolynomialTerm>,
}

impl PolynomialDrive {
    /// Highest polynomial degree m.
    pub fn degree(&self) -> usize {
        self.terms.iter().map(|t| t.degree()).max().unwrap_or(0)
    }
}

/// −d²/dx² + x^{2k} + p(x) in its own eigenbasis, with V(t) assembled there.
pub struct AnharmonicModel<T: Real> {
    pub model: SpectralModel<T>,
    /// V(t) in the eigenbasis, declared with ν = m/(2k).
    pub perturbation: Arc<ModulatedSampler<T>>,
    /// H + V(t).
    pub generator: Arc<ModulatedSampler<T>>,
    pub basis: GridBasis<T>,
    /// Constant added so that the lowest level is at least 1.
    pub shift: f64,
    pub nu: f64,
    /// Whether m < k − 1, the degree condition for the gap route.
    pub gap_route: bool,
    pub validation: ValidationReport,
}

/// ∫₀¹ (1 − u^{2k})^{1/2} du.
fn phase_integral(k: u32) -> f64 {
    let a = 1.0 / (2.0 * k as f64);
    libm::tgamma(a) * libm::tgamma(1.5) / (2.0 * k as f64 * libm::tgamma(a + 1.5))
}

/// Bohr–Sommerfeld constant b_k in λ_j^{(k+1)/(2k)} ≈ b_k (j + 1/2).
pub fn bohr_sommerfeld_constant(k: u32) -> f64 {
    std::f64::consts::PI / (2.0 * phase_integral(k))
}

/// Builds the first `dim` levels of −d²/dx² + x^{2k} + p(x) on the grid.
pub fn build_anharmonic_model<T: Real>(
    k: u32,
    p: &[f64],
    drive: &PolynomialDrive,
    grid: &RealLineGrid,
    dim: usize,
) -> Result<AnharmonicModel<T>> {
    grid.validate()?;
    if k == 0 {
        return Err(Error::ModelValidation("anharmonic order k must be at least 1".into()));
    }
    if dim < 16 || dim > grid.points {
        return Err(Error::ModelValidation(format!("dim must lie in 16..={}, got {dim}", grid.points)));
    }
    let p_deg = p.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    if p_deg >= 2 * k as usize {
        return Err(Error::ModelValidation(format!(
            "p(x) must have degree below 2k = {}, got {p_deg}",
            2 * k
        )));
    }
    let nodes: Vec<T> = grid.nodes();
    let h: T = cast(grid.spacing());
    let p_eval = |x: T| p.iter().rev().fold(T::zero(), |acc, &c| acc * x + cast(c));
    let (mut diag, off) = schrodinger_tridiagonal(&nodes, h, |x| x.powi(2 * k as i32) + p_eval(x));
    let mut values = tridiagonal_lowest_eigenvalues(&diag, &off, dim);
    let shift = (1.0 - to_f64(values[0])).max(0.0);
    if shift > 0.0 {
        for d in diag.iter_mut() {
            *d += cast(shift);
        }
        for v in values.iter_mut() {
            *v += cast(shift);
        }
    }
    let lam_max = to_f64(values[dim - 1]);
    resolution_check("anharmonic", lam_max, lam_max.powf(1.0 / (2.0 * k as f64)), grid)?;
    // Bohr–Sommerfeld linearity on the upper three quarters of the levels.
    let e = (k + 1) as f64 / (2.0 * k as f64);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (dim / 4..dim)
        .map(|j| (j as f64 + 0.5, (to_f64(values[j]) - shift).max(0.0).powf(e)))
        .unzip();
    let fit = line_fit(&xs, &ys).ok_or_else(|| Error::GridUnderResolved("degenerate Bohr-Sommerfeld fit".into()))?;
    let mut checks = vec![Check::new("Bohr-Sommerfeld linearity 1 - R^2", 1.0 - fit.r_squared, 1e-4)];
    let b = bohr_sommerfeld_constant(k);
    checks.push(Check::informational("Bohr-Sommerfeld slope relative to b_k", (fit.slope - b).abs() / b));
    if fit.r_squared <= 0.9999 {
        return Err(Error::GridUnderResolved(format!(
            "Bohr-Sommerfeld linearity fit has R^2 = {:.6}",
            fit.r_squared
        )));
    }
    let vectors = tridiagonal_inverse_iteration(&diag, &off, &values);
    let m = drive.degree();
    let nu = m as f64 / (2.0 * k as f64);
    let mut perturbation = ModulatedSampler::new(dim).with_nu(cast(nu));
    for term in &drive.terms {
        let mut weighted = vectors.clone();
        for (i, &x) in nodes.iter().enumerate() {
            weighted.row_mut(i).scale_mut(term.eval(x));
        }
        let mat = vectors.tr_mul(&weighted);
        let sym = (&mat + mat.transpose()) * cast::<T>(0.5);
        perturbation = perturbation.term(term.envelope, TermMatrix::Dense(sym.map(real)));
    }
    let mut generator = ModulatedSampler::new(dim)
        .with_nu(cast(nu))
        .term(Envelope::constant(1.0), TermMatrix::Diagonal(values.clone()));
    for (env, mat) in perturbation.terms() {
        generator = generator.term(*env, mat.clone());
    }
    let model = SpectralModel::new(values, format!("anharmonic_k{k}"))?;
    Ok(AnharmonicModel {
        model,
        perturbation: Arc::new(perturbation),
        generator: Arc::new(generator),
        basis: GridBasis {
            nodes,
            spacing: h,
            vectors,
        },
        shift,
        nu,
        gap_route: (m as i64) < k as i64 - 1,
        validation: ValidationReport { checks },
    })
}

/// exp(−(x−c)²/(2σ²)) normalized in L²(ℝ).
pub fn gaussian<T: Real>(sigma: T, center: T) -> impl Fn(T) -> Complex<T> {
    let norm = (T::pi() * sigma * sigma).powf(cast(-0.25));
    move |x: T| {
        let d = (x - center) / sigma;
        real(norm * (-(d * d) * cast(0.5)).exp())
    }
}

/// ‖u'‖ for the normalized Gaussian of width σ.
pub fn gaussian_derivative_norm<T: Real>(sigma: T) -> T {
    T::one() / (sigma * cast::<T>(2.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{propagate, PropagatorConfig};
    use crate::spectral::{scale_operator_norm, sobolev_norm, OperatorSampler};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid_norm(v: &CVector<f64>, h: f64) -> f64 {
        (v.iter().map(|z| z.norm_sqr()).sum::<f64>() * h).sqrt()
    }

    fn grid_derivative_norm(v: &CVector<f64>, h: f64) -> f64 {
        let n = v.len();
        let s: f64 = (0..n - 1).map(|i| ((v[i + 1] - v[i]) / h).norm_sqr()).sum();
        (s * h).sqrt()
    }

    #[test]
    fn dilation_small_grid_spectrum_and_oracle() {
        let grid = RealLineGrid::new(256, 10.0);
        let d = build_dilation_model::<f64>(&grid, 64, 16).unwrap();
        for j in 0..8 {
            assert!((d.model.eigenvalues()[j] - (2 * j + 1) as f64).abs() / ((2 * j + 1) as f64) < 0.005);
        }
        let u = gaussian(0.8, 0.0);
        let h = d.basis.spacing;
        let g0 = d.exact_flow(0.0, &u);
        let g1 = d.exact_flow(0.5, &u);
        assert_relative_eq!(grid_norm(&g0, h), 1.0, epsilon = 1e-6);
        assert_relative_eq!(grid_norm(&g1, h), 1.0, epsilon = 1e-6);
        let ratio = grid_derivative_norm(&g1, h) / grid_derivative_norm(&g0, h);
        assert!((ratio - 0.5f64.exp()).abs() / 0.5f64.exp() < 0.01, "ratio {ratio}");
        assert_relative_eq!(grid_derivative_norm(&g0, h), gaussian_derivative_norm(0.8), max_relative = 0.01);
        assert!(d.generator.eval(0.0).is_hermitian());
    }

    #[test]
    fn dilation_flow_matches_oracle_on_grid() {
        let grid = RealLineGrid::new(384, 10.0);
        let d = build_dilation_model::<f64>(&grid, 384, 16).unwrap();
        let u = gaussian(0.8, 0.0);
        let psi = d.basis.to_state(&u);
        let t = 0.5;
        let cfg = PropagatorConfig::new(0.05, 0.0, t);
        let tr = propagate(&d.model, d.generator.as_ref(), &psi, &cfg, &[1.0]).unwrap();
        let num = d.basis.to_grid(tr.final_state());
        let exact = d.exact_flow(t, &u);
        let err = grid_norm(&(num - exact), d.basis.spacing);
        assert!(err < 0.02, "grid error {err}");
        let h1 = sobolev_norm(&d.model, tr.final_state(), 1.0).unwrap();
        assert!(h1.is_finite());
    }

    #[test]
    fn anharmonic_harmonic_case_and_bs_constant() {
        assert_relative_eq!(bohr_sommerfeld_constant(1), 2.0, epsilon = 1e-12);
        let grid = RealLineGrid::new(2000, 12.0);
        let m = build_anharmonic_model::<f64>(1, &[], &PolynomialDrive::default(), &grid, 40).unwrap();
        let e = m.model.eigenvalues();
        for w in e.windows(2) {
            assert!((w[1] - w[0] - 2.0).abs() < 0.02);
        }
    }

    #[test]
    fn anharmonic_under_resolved_and_shift() {
        let coarse = RealLineGrid::new(100, 6.0);
        assert!(matches!(
            build_anharmonic_model::<f64>(2, &[], &PolynomialDrive::default(), &coarse, 90),
            Err(Error::GridUnderResolved(_))
        ));
        let grid = RealLineGrid::new(1500, 6.0);
        let m = build_anharmonic_model::<f64>(2, &[-5.0], &PolynomialDrive::default(), &grid, 40).unwrap();
        assert!(m.shift > 0.0);
        assert_relative_eq!(m.model.eigenvalues()[0], 1.0, epsilon = 1e-9);
    }

    #[test]
    fn anharmonic_drive_relative_order() {
        let grid = RealLineGrid::new(3000, 7.0);
        let drive = PolynomialDrive {
            terms: vec![PolynomialTerm {
                coefficients: vec![0.0, 1.0],
                envelope: Envelope::cosine(1.0, 1.0, 0.0),
            }],
        };
        let m = build_anharmonic_model::<f64>(4, &[], &drive, &grid, 60).unwrap();
        assert_relative_eq!(m.nu, 0.125);
        assert!(m.gap_route);
        // ‖H^p V(t) H^{−p−ν}‖ stays bounded as the truncation grows
        let v = m.perturbation.eval(0.0);
        let sizes = [20usize, 40, 60];
        let norms: Vec<f64> = sizes
            .iter()
            .map(|&n| {
                let sub = m.model.observed(n).unwrap();
                scale_operator_norm(&sub, &v, 0.5, 0.5 + m.nu)
            })
            .collect();
        assert!(norms[2] < 1.5 * norms[0], "{norms:?}");
        let v0 = v.entries()[(0, 0)];
        assert!(v0.norm() < 1e-8, "parity forces a zero diagonal for odd V");
    }

    #[test]
    fn weighted_derivative_inequality_surrogate() {
        // ‖x^j ∂^l u‖ ≤ C‖H^μ u‖ for j/(2k) + l/2 ≤ μ; C measured, stable as the band grows
        let k = 2u32;
        let grid = RealLineGrid::new(3000, 7.0);
        let m = build_anharmonic_model::<f64>(k, &[], &PolynomialDrive::default(), &grid, 80).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = m.basis.spacing;
        let x = &m.basis.nodes;
        let mu: f64 = 0.5;
        let ratio = |band: usize, rng: &mut ChaCha8Rng| {
            let mut worst: f64 = 0.0;
            for _ in 0..20 {
                let c: Vec<f64> = (0..band).map(|_| rng.gen::<f64>() - 0.5).collect();
                let u: Vec<f64> = (0..x.len()).map(|i| (0..band).map(|j| c[j] * m.basis.vectors[(i, j)]).sum()).collect();
                let hmu: f64 = (0..band).map(|j| m.model.eigenvalues()[j].powf(2.0 * mu) * c[j] * c[j]).sum::<f64>().sqrt();
                for (jj, l) in [(2usize, 0usize), (0, 1), (1, 0)] {
                    if jj as f64 / (2.0 * k as f64) + l as f64 / 2.0 > mu + 1e-12 {
                        continue;
                    }
                    let val: f64 = (0..x.len() - 1)
                        .map(|i| {
                            let f = if l == 0 { u[i] } else { (u[i + 1] - u[i]) / h };
                            (x[i].powi(jj as i32) * f).powi(2)
                        })
                        .sum::<f64>()
                        .sqrt();
                    worst = worst.max(val / hmu);
                }
            }
            worst
        };
        let c40 = ratio(40, &mut rng);
        let c80 = ratio(80, &mut rng);
        assert!(c40.is_finite() && c80 < 2.0 * c40, "{c40} {c80}");
    }
}
