//! The Laplacian on the circle in Fourier modes, with trigonometric drives.

use super::{Check, ValidationReport};
use crate::error::{Error, Result};
use crate::sampler::{Envelope, ModulatedSampler, SparseMatrix, TermMatrix};
use crate::scalar::{cast, cplx, Real};
use crate::spectral::SpectralModel;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// envelope(t)·(a cos(qx) + b sin(qx)).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierMode {
    pub q: usize,
    #[serde(default)]
    pub cos: f64,
    #[serde(default)]
    pub sin: f64,
    pub envelope: Envelope,
}

/// V(t, x) as a finite sum of Fourier modes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierDrive {
    pub modes: Vec<FourierMode>,
}

impl FourierDrive {
    pub fn bandwidth(&self) -> usize {
        self.modes.iter().map(|m| m.q).max().unwrap_or(0)
    }

    /// One smooth mode envelope(t)·cos(qx).
    pub fn single(q: usize, amplitude: f64, envelope: Envelope) -> Self {
        Self {
            modes: vec![FourierMode {
                q,
                cos: amplitude,
                sin: 0.0,
                envelope,
            }],
        }
    }
}

/// Fourier index of the i-th basis vector in the order 0, 1, −1, 2, −2, … .
pub fn torus_mode(i: usize) -> i64 {
    if i == 0 {
        0
    } else if i % 2 == 1 {
        (i as i64 + 1) / 2
    } else {
        -(i as i64) / 2
    }
}

/// Basis position of Fourier index n.
pub fn torus_index(n: i64) -> usize {
    match n {
        0 => 0,
        n if n > 0 => 2 * n as usize - 1,
        n => 2 * (-n) as usize,
    }
}

pub struct TorusModel<T: Real> {
    pub model: SpectralModel<T>,
    pub perturbation: Arc<ModulatedSampler<T>>,
    pub generator: Arc<ModulatedSampler<T>>,
    pub cutoff: usize,
    pub validation: ValidationReport,
}

/// The matrix of cos(qx)·a + sin(qx)·b between modes −c..c: ⟨e_m, V e_n⟩ is the
/// Fourier coefficient of V at m − n.
fn mode_matrix<T: Real>(cutoff: usize, mode: &FourierMode) -> SparseMatrix<T> {
    let dim = 2 * cutoff + 1;
    let q = mode.q as i64;
    let half = cast::<T>(0.5);
    let mut triplets = Vec::new();
    for i in 0..dim {
        let m = torus_mode(i);
        if q == 0 {
            triplets.push((i, i, cplx(cast::<T>(mode.cos), T::zero())));
            continue;
        }
        for (shift, sign) in [(q, 1.0), (-q, -1.0)] {
            let n = m - shift;
            if n.unsigned_abs() as usize > cutoff {
                continue;
            }
            // cos(qx) = (e^{iqx} + e^{−iqx})/2, sin(qx) = (e^{iqx} − e^{−iqx})/(2i)
            let c = cplx(cast::<T>(mode.cos) * half, -cast::<T>(sign * mode.sin) * half);
            triplets.push((i, torus_index(n), c));
        }
    }
    SparseMatrix::from_triplets(dim, triplets)
}

/// H = diag(n² + 1) on modes n = −cutoff..cutoff and L = H + V(t).
pub fn build_torus_model<T: Real>(drive: &FourierDrive, cutoff: usize) -> Result<TorusModel<T>> {
    if cutoff < 32 {
        return Err(Error::ModelValidation(format!("torus cutoff must be at least 32, got {cutoff}")));
    }
    if drive.bandwidth() * 4 > cutoff {
        return Err(Error::ModelValidation(format!(
            "drive bandwidth {} exceeds cutoff/4 = {}",
            drive.bandwidth(),
            cutoff / 4
        )));
    }
    let dim = 2 * cutoff + 1;
    let values: Vec<T> = (0..dim).map(|i| cast((torus_mode(i).pow(2) + 1) as f64)).collect();
    let exact = values
        .iter()
        .enumerate()
        .all(|(i, &v)| v == cast((torus_mode(i) * torus_mode(i) + 1) as f64));
    let mut perturbation = ModulatedSampler::new(dim);
    for mode in &drive.modes {
        perturbation = perturbation.term(mode.envelope, TermMatrix::Sparse(mode_matrix(cutoff, mode)));
    }
    let mut generator = ModulatedSampler::new(dim).term(Envelope::constant(1.0), TermMatrix::Diagonal(values.clone()));
    for (env, mat) in perturbation.terms() {
        generator = generator.term(*env, mat.clone());
    }
    let model = SpectralModel::new(values, "torus")?;
    Ok(TorusModel {
        model,
        perturbation: Arc::new(perturbation),
        generator: Arc::new(generator),
        cutoff,
        validation: ValidationReport {
            checks: vec![Check::new("torus n^2+1 exactness", if exact { 0.0 } else { 1.0 }, 0.0)],
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clusters::{detect_clusters, DetectOptions};
    use crate::propagator::{propagate, PropagatorConfig};
    use crate::spectral::{OperatorSampler, StateVector};
    use nalgebra::Complex;

    #[test]
    fn ordering_roundtrip() {
        for i in 0..50 {
            assert_eq!(torus_index(torus_mode(i)), i);
        }
        assert_eq!((torus_mode(1), torus_mode(2), torus_mode(3)), (1, -1, 2));
    }

    #[test]
    fn two_cos_has_unit_first_bands() {
        let drive = FourierDrive::single(1, 2.0, Envelope::constant(1.0));
        let t = build_torus_model::<f64>(&drive, 32).unwrap();
        let v = t.perturbation.eval(0.0);
        for i in 0..t.model.dim() {
            for j in 0..t.model.dim() {
                let d = (torus_mode(i) - torus_mode(j)).abs();
                let expect = if d == 1 { 1.0 } else { 0.0 };
                assert!((v.entries()[(i, j)] - Complex::new(expect, 0.0)).norm() < 1e-15);
            }
        }
    }

    #[test]
    fn sine_mode_is_hermitian_with_expected_phase() {
        let drive = FourierDrive {
            modes: vec![FourierMode { q: 2, cos: 0.0, sin: 1.0, envelope: Envelope::constant(1.0) }],
        };
        let t = build_torus_model::<f64>(&drive, 40).unwrap();
        let v = t.perturbation.eval(0.0);
        assert!(v.is_hermitian());
        // ⟨e_2, sin(2x) e_0⟩ = 1/(2i)
        let z = v.entries()[(torus_index(2), torus_index(0))];
        assert!((z - Complex::new(0.0, -0.5)).norm() < 1e-15);
    }

    #[test]
    fn multiplicity_and_flat_flow() {
        let t = build_torus_model::<f64>(&FourierDrive::default(), 32).unwrap();
        let dec = detect_clusters(&t.model, &DetectOptions::default()).unwrap();
        assert_eq!(dec.clusters[0].count, 1);
        assert!(dec.clusters[1..].iter().all(|c| c.count == 2));
        let psi = StateVector::new(nalgebra::DVector::from_fn(t.model.dim(), |i, _| Complex::new(1.0 / (1.0 + i as f64), 0.0))).normalized();
        let tr = propagate(&t.model, t.generator.as_ref(), &psi, &PropagatorConfig::new(0.5, 0.0, 5.0), &[2.0]).unwrap();
        let first = tr.norms[0][0];
        assert!(tr.norms[0].iter().all(|&x| (x - first).abs() < 1e-12 * first));
    }

    #[test]
    fn bandwidth_and_cutoff_errors() {
        let wide = FourierDrive::single(9, 1.0, Envelope::constant(1.0));
        assert!(matches!(build_torus_model::<f64>(&wide, 32), Err(Error::ModelValidation(_))));
        assert!(build_torus_model::<f64>(&FourierDrive::default(), 16).is_err());
    }
}
