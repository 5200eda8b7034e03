//! Concrete instances: the dilation example on the harmonic oscillator,
//! anharmonic oscillators, the torus, and lattice Schrödinger operators.

mod lattice;
mod real_line;
mod torus;

pub use lattice::{build_lattice_model, LatticeModel, OmegaSpec};
pub use real_line::{
    bohr_sommerfeld_constant, build_anharmonic_model, build_dilation_model, gaussian, gaussian_derivative_norm,
    AnharmonicModel, DilationModel, GridBasis, PolynomialDrive, PolynomialTerm, RealLineGrid,
};
pub use torus::{build_torus_model, torus_index, torus_mode, FourierDrive, FourierMode, TorusModel};

use crate::error::{Error, Result};
use crate::scalar::{cast, real, to_f64, CVector, Real};
use crate::spectral::{OperatorSampler, SpectralModel, StateVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// One self-validation measurement.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    /// Upper bound on `value`; `None` for informational entries.
    pub threshold: Option<f64>,
    pub passed: bool,
}

impl Check {
    pub fn new(name: &str, value: f64, threshold: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: Some(threshold),
            passed: value <= threshold,
        }
    }

    pub fn informational(name: &str, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
            threshold: None,
            passed: true,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

fn default_observe() -> usize {
    256
}

fn default_validate() -> usize {
    32
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelKind {
    DilationHarmonic {
        grid: RealLineGrid,
        /// Number of oscillator levels entering the norms.
        #[serde(default = "default_observe")]
        observe: usize,
        /// Number of levels checked against 2n+1.
        #[serde(default = "default_validate")]
        validate: usize,
    },
    Anharmonic {
        k: u32,
        /// Coefficients of the lower-order polynomial p(x).
        #[serde(default)]
        p: Vec<f64>,
        #[serde(default)]
        drive: PolynomialDrive,
        grid: RealLineGrid,
        dim: usize,
    },
    Torus {
        cutoff: usize,
        #[serde(default)]
        drive: FourierDrive,
    },
    Lattice {
        d: usize,
        radius: usize,
        #[serde(default)]
        omega: OmegaSpec,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub kind: ModelKind,
    /// Expected gap exponent; checked against the kind when present.
    #[serde(default)]
    pub declared_mu: Option<f64>,
    /// Expected relative order of V; checked against the drive when present.
    #[serde(default)]
    pub declared_nu: Option<f64>,
}

impl ModelSpec {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            declared_mu: None,
            declared_nu: None,
        }
    }

    /// Gap exponent implied by the kind (None for the lattice, which is
    /// handled through the commutator route).
    pub fn expected_mu(&self) -> Option<f64> {
        match &self.kind {
            ModelKind::DilationHarmonic { .. } => Some(0.0),
            ModelKind::Anharmonic { k, .. } => Some((*k as f64 - 1.0) / (*k as f64 + 1.0)),
            ModelKind::Torus { .. } => Some(1.0),
            ModelKind::Lattice { .. } => None,
        }
    }

    /// Builds the model; `seed` feeds random potentials.
    pub fn build<T: Real>(&self, seed: u64) -> Result<BuiltModel<T>> {
        if let Some(mu) = self.declared_mu {
            match self.expected_mu() {
                Some(e) if (e - mu).abs() <= 1e-9 => {}
                e => {
                    return Err(Error::ModelValidation(format!(
                        "declared_mu {mu} inconsistent with the model kind (expected {e:?})"
                    )))
                }
            }
        }
        let built = match &self.kind {
            ModelKind::DilationHarmonic { grid, observe, validate } => {
                let d = build_dilation_model::<T>(grid, *observe, *validate)?;
                BuiltModel {
                    model: d.model,
                    generator: d.generator,
                    perturbation: None,
                    nu: 0.0,
                    basis: Some(d.basis),
                    sites: None,
                    validation: d.validation,
                }
            }
            ModelKind::Anharmonic { k, p, drive, grid, dim } => {
                let a = build_anharmonic_model::<T>(*k, p, drive, grid, *dim)?;
                BuiltModel {
                    model: a.model,
                    generator: a.generator,
                    perturbation: Some(a.perturbation),
                    nu: a.nu,
                    basis: Some(a.basis),
                    sites: None,
                    validation: a.validation,
                }
            }
            ModelKind::Torus { cutoff, drive } => {
                let t = build_torus_model::<T>(drive, *cutoff)?;
                BuiltModel {
                    model: t.model,
                    generator: t.generator,
                    perturbation: Some(t.perturbation),
                    nu: 0.0,
                    basis: None,
                    sites: None,
                    validation: t.validation,
                }
            }
            ModelKind::Lattice { d, radius, omega } => {
                let l = build_lattice_model::<T>(*d, *radius, omega, seed)?;
                BuiltModel {
                    model: l.model,
                    generator: l.generator,
                    perturbation: None,
                    nu: 0.0,
                    basis: None,
                    sites: Some(l.sites),
                    validation: l.validation,
                }
            }
        };
        if let Some(nu) = self.declared_nu {
            if (nu - built.nu).abs() > 1e-9 {
                return Err(Error::ModelValidation(format!(
                    "declared_nu {nu} differs from the drive's relative order {}",
                    built.nu
                )));
            }
        }
        if !built.validation.passed() {
            let failed: Vec<&str> = built.validation.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            return Err(Error::ModelValidation(format!("self-validation failed: {}", failed.join(", "))));
        }
        Ok(built)
    }
}

/// A built model: reference spectrum, generator L(t) and, where L = H + V,
/// the perturbation V(t).
pub struct BuiltModel<T: Real> {
    pub model: SpectralModel<T>,
    pub generator: Arc<dyn OperatorSampler<T>>,
    pub perturbation: Option<Arc<dyn OperatorSampler<T>>>,
    pub nu: f64,
    pub basis: Option<GridBasis<T>>,
    pub sites: Option<Vec<Vec<i64>>>,
    pub validation: ValidationReport,
}

/// Initial datum ψ_s.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// The index-th eigenvector of H.
    Basis { index: usize },
    /// ψ_j ∝ λ_j^{−decay} on the observed modes.
    Power { decay: f64 },
    /// Normalized Gaussian on the real-line grid.
    Gaussian { sigma: f64, center: f64 },
    /// δ at a lattice site.
    Site { coords: Vec<i64> },
    /// Gaussian random coefficients on the first `modes` basis vectors.
    Random { modes: usize },
}

impl<T: Real> BuiltModel<T> {
    pub fn initial_state(&self, init: &InitialState, seed: u64) -> Result<StateVector<T>> {
        let n = self.model.dim();
        let psi = match init {
            InitialState::Basis { index } => {
                if *index >= n {
                    return Err(Error::Config(format!("basis index {index} outside dimension {n}")));
                }
                StateVector::basis(n, *index)
            }
            InitialState::Power { decay } => {
                let obs = self.model.observe_dim();
                let lam = self.model.eigenvalues();
                StateVector::new(CVector::from_fn(n, |j, _| {
                    if j < obs {
                        real(lam[j].powf(cast(-decay)))
                    } else {
                        real(T::zero())
                    }
                }))
            }
            InitialState::Gaussian { sigma, center } => {
                let basis = self
                    .basis
                    .as_ref()
                    .ok_or_else(|| Error::Config("gaussian initial data need a real-line model".into()))?;
                basis.to_state(gaussian(cast(*sigma), cast(*center)))
            }
            InitialState::Site { coords } => {
                let sites = self
                    .sites
                    .as_ref()
                    .ok_or_else(|| Error::Config("site initial data need a lattice model".into()))?;
                let idx = sites
                    .iter()
                    .position(|s| s == coords)
                    .ok_or_else(|| Error::Config(format!("site {coords:?} outside the box")))?;
                StateVector::basis(n, idx)
            }
            InitialState::Random { modes } => {
                if *modes == 0 || *modes > n {
                    return Err(Error::Config(format!("random modes must be in 1..={n}")));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                StateVector::new(CVector::from_fn(n, |j, _| {
                    if j < *modes {
                        let (a, b): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
                        nalgebra::Complex::new(cast(a), cast(b))
                    } else {
                        real(T::zero())
                    }
                }))
            }
        };
        if to_f64(psi.norm()) == 0.0 {
            return Err(Error::Config("initial state vanishes".into()));
        }
        Ok(psi.normalized())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::Envelope;

    #[test]
    fn spec_parses_and_rejects_unknown_fields() {
        let json = r#"{"kind": {"type": "torus", "cutoff": 32,
            "drive": {"modes": [{"q": 1, "cos": 0.5, "envelope": {"type": "cosine", "amplitude": 1.0, "frequency": 0.3, "phase": 0.0}}]}},
            "declared_mu": 1.0}"#;
        let spec: ModelSpec = serde_json::from_str(json).unwrap();
        let built = spec.build::<f64>(0).unwrap();
        assert_eq!(built.model.dim(), 65);
        let bad = r#"{"kind": {"type": "torus", "cutoff": 32, "colour": 1}}"#;
        assert!(serde_json::from_str::<ModelSpec>(bad).is_err());
        let bad_top = r#"{"kind": {"type": "torus", "cutoff": 32}, "extra": 1}"#;
        assert!(serde_json::from_str::<ModelSpec>(bad_top).is_err());
    }

    #[test]
    fn declared_constants_are_checked() {
        let mut spec = ModelSpec::new(ModelKind::Torus { cutoff: 32, drive: FourierDrive::single(1, 1.0, Envelope::constant(1.0)) });
        spec.declared_mu = Some(0.5);
        assert!(matches!(spec.build::<f64>(0), Err(Error::ModelValidation(_))));
        spec.declared_mu = Some(1.0);
        spec.declared_nu = Some(0.25);
        assert!(matches!(spec.build::<f64>(0), Err(Error::ModelValidation(_))));
        let lattice = ModelSpec { declared_mu: Some(1.0), ..ModelSpec::new(ModelKind::Lattice { d: 1, radius: 8, omega: OmegaSpec::default() }) };
        assert!(lattice.build::<f64>(0).is_err());
    }

    #[test]
    fn initial_states() {
        let spec = ModelSpec::new(ModelKind::Torus { cutoff: 32, drive: FourierDrive::default() });
        let b = spec.build::<f64>(0).unwrap();
        let p = b.initial_state(&InitialState::Power { decay: 1.0 }, 0).unwrap();
        assert!((p.norm() - 1.0).abs() < 1e-14);
        let r1 = b.initial_state(&InitialState::Random { modes: 10 }, 3).unwrap();
        let r2 = b.initial_state(&InitialState::Random { modes: 10 }, 3).unwrap();
        assert_eq!(r1, r2);
        assert!(b.initial_state(&InitialState::Gaussian { sigma: 1.0, center: 0.0 }, 0).is_err());
        assert!(b.initial_state(&InitialState::Basis { index: 1000 }, 0).is_err());
    }
}
