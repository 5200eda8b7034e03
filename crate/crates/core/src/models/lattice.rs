//! Discrete Schrödinger operators on a box in ℤᵈ with time-dependent
//! on-site potentials.

use super::{Check, ValidationReport};
use crate::error::{Error, Result};
use crate::sampler::{Envelope, ModulatedSampler, SparseMatrix, TermMatrix};
use crate::scalar::{cast, cplx, to_f64, Real};
use crate::spectral::SpectralModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::sync::Arc;

/// ω_n(t) = amplitude·⟨n⟩^growth·Σ_q (a_{n,q} cos(f_q t) + b_{n,q} sin(f_q t)) / #q
/// with a, b uniform in [−1, 1] drawn from the seed.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OmegaSpec {
    pub frequencies: Vec<f64>,
    #[serde(default)]
    pub amplitude: f64,
    /// Polynomial weight exponent; 0 gives a bounded family.
    #[serde(default)]
    pub growth: f64,
}

pub struct LatticeModel<T: Real> {
    pub model: SpectralModel<T>,
    pub generator: Arc<ModulatedSampler<T>>,
    /// Site coordinates in basis order (ascending ⟨n⟩).
    pub sites: Vec<Vec<i64>>,
    pub validation: ValidationReport,
}

impl<T: Real> LatticeModel<T> {
    pub fn site_index(&self, n: &[i64]) -> Option<usize> {
        self.sites.iter().position(|s| s == n)
    }
}

fn bracket(n: &[i64]) -> f64 {
    (1.0 + n.iter().map(|&x| (x * x) as f64).sum::<f64>()).sqrt()
}

/// Sites of {−M..M}^d, H = diag⟨n⟩ and L(t) = H_0 + diag ω_n(t) where
/// H_0 sums over sup-norm neighbours. Norms observe the sites with
/// ⟨n⟩ ≤ ⟨3M/4⟩, away from the Dirichlet boundary.
pub fn build_lattice_model<T: Real>(d: usize, radius: usize, omega: &OmegaSpec, seed: u64) -> Result<LatticeModel<T>> {
    if d == 0 || d > 3 {
        return Err(Error::ModelValidation(format!("lattice dimension must be 1..=3, got {d}")));
    }
    if radius < 8 {
        return Err(Error::ModelValidation(format!("box radius must be at least 8, got {radius}")));
    }
    let m = radius as i64;
    let mut sites: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..d {
        sites = sites
            .into_iter()
            .flat_map(|s| {
                (-m..=m).map(move |x| {
                    let mut t = s.clone();
                    t.push(x);
                    t
                })
            })
            .collect();
    }
    sites.sort_by(|a, b| bracket(a).partial_cmp(&bracket(b)).unwrap().then_with(|| a.cmp(b)));
    let index: HashMap<Vec<i64>, usize> = sites.iter().cloned().enumerate().map(|(i, s)| (s, i)).collect();
    let dim = sites.len();
    let offsets: Vec<Vec<i64>> = {
        let mut all: Vec<Vec<i64>> = vec![vec![]];
        for _ in 0..d {
            all = all
                .into_iter()
                .flat_map(|s| {
                    (-1..=1).map(move |x| {
                        let mut t = s.clone();
                        t.push(x);
                        t
                    })
                })
                .collect();
        }
        all.into_iter().filter(|e| e.iter().any(|&x| x != 0)).collect()
    };
    let mut triplets = Vec::new();
    for (i, s) in sites.iter().enumerate() {
        for e in &offsets {
            let nb: Vec<i64> = s.iter().zip(e).map(|(a, b)| a + b).collect();
            if let Some(&j) = index.get(&nb) {
                triplets.push((i, j, cplx(T::one(), T::zero())));
            }
        }
    }
    let h0 = SparseMatrix::from_triplets(dim, triplets);
    let values: Vec<T> = sites.iter().map(|s| cast(bracket(s))).collect();
    let observe_edge = bracket(&[(3 * radius / 4) as i64]);
    let observe = sites.iter().take_while(|s| bracket(s) <= observe_edge + 1e-12).count();
    // [H_0, H] has entries ±(⟨n+ε⟩ − ⟨n⟩) on the neighbour bands.
    let comm_sup = sites
        .iter()
        .flat_map(|s| {
            offsets.iter().map(move |e| {
                let nb: Vec<i64> = s.iter().zip(e).map(|(a, b)| a + b).collect();
                (bracket(&nb) - bracket(s)).abs()
            })
        })
        .fold(0.0, f64::max);
    let exact = values.iter().zip(&sites).all(|(&v, s)| (to_f64(v) - bracket(s)).abs() <= 1e-12 * bracket(s));
    let mut generator = ModulatedSampler::new(dim)
        .term(Envelope::constant(1.0), TermMatrix::Sparse(h0))
        .with_krylov(true);
    if omega.amplitude != 0.0 && !omega.frequencies.is_empty() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = omega.amplitude / omega.frequencies.len() as f64;
        for &f in &omega.frequencies {
            let weight = |s: &Vec<i64>| scale * bracket(s).powf(omega.growth);
            let a: Vec<T> = sites.iter().map(|s| cast(weight(s) * rng.gen_range(-1.0..=1.0))).collect();
            let b: Vec<T> = sites.iter().map(|s| cast(weight(s) * rng.gen_range(-1.0..=1.0))).collect();
            generator = generator
                .term(Envelope::cosine(1.0, f, 0.0), TermMatrix::Diagonal(a))
                .term(Envelope::sine(1.0, f, 0.0), TermMatrix::Diagonal(b));
        }
    }
    let model = SpectralModel::with_observe_dim(values, observe, format!("lattice_d{d}"))?;
    let mut checks = vec![Check::new("lattice diagonal exactness", if exact { 0.0 } else { 1.0 }, 0.0)];
    checks.push(Check::informational("sup |<n+e> - <n>|", comm_sup));
    if d == 1 {
        checks.push(Check::new("d=1 commutator entries below 1", comm_sup, 1.0));
    }
    Ok(LatticeModel {
        model,
        generator: Arc::new(generator),
        sites,
        validation: ValidationReport { checks },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::propagator::{propagate, PropagatorConfig};
    use crate::spectral::{OperatorSampler, StateVector};
    use nalgebra::Complex;

    #[test]
    fn one_dimensional_commutator_entries() {
        let l = build_lattice_model::<f64>(1, 16, &OmegaSpec::default(), 0).unwrap();
        let h0 = l.generator.eval(0.0);
        let lam = l.model.eigenvalues();
        let mut sup: f64 = 0.0;
        for i in 0..l.model.dim() {
            for j in 0..l.model.dim() {
                let c = h0.entries()[(i, j)].re * (lam[j] - lam[i]);
                if h0.entries()[(i, j)].re != 0.0 {
                    assert_eq!((l.sites[i][0] - l.sites[j][0]).abs(), 1);
                    let expect = super::bracket(&l.sites[j]) - super::bracket(&l.sites[i]);
                    assert!((c - expect).abs() < 1e-14);
                }
                sup = sup.max(c.abs());
            }
        }
        assert!(sup < 1.0);
        assert!(l.validation.passed());
    }

    #[test]
    fn sorted_and_observe_window() {
        let l = build_lattice_model::<f64>(2, 8, &OmegaSpec::default(), 0).unwrap();
        assert_eq!(l.model.dim(), 17 * 17);
        assert!(l.model.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(l.sites[0], vec![0, 0]);
        let edge = super::bracket(&[6]);
        assert!(l.model.eigenvalues()[..l.model.observe_dim()].iter().all(|&x| x <= edge + 1e-12));
        // sup-norm neighbours: the origin has 8
        let row = l.generator.eval(0.0);
        let count = (0..l.model.dim()).filter(|&j| row.entries()[(0, j)].re != 0.0).count();
        assert_eq!(count, 8);
    }

    #[test]
    fn random_potential_conserves_norm() {
        let omega = OmegaSpec { frequencies: vec![0.7, 1.3], amplitude: 1.0, growth: 0.0 };
        let l = build_lattice_model::<f64>(1, 32, &omega, 5).unwrap();
        assert!(l.generator.eval(0.4).is_hermitian());
        let psi = StateVector::basis(l.model.dim(), 0);
        let tr = propagate(&l.model, l.generator.as_ref(), &psi, &PropagatorConfig::new(0.05, 0.0, 10.0), &[1.0]).unwrap();
        assert!(tr.conservation_drift < 1e-10);
        let again = build_lattice_model::<f64>(1, 32, &omega, 5).unwrap();
        assert_eq!(again.generator.eval(0.4).entries(), l.generator.eval(0.4).entries());
        let _ = Complex::new(0.0, 0.0);
    }
}
