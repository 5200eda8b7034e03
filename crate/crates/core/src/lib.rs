//! Finite-dimensional spectral laboratory: Hilbert scales of a positive
//! reference operator, regularized unitary flows, adiabatic
//! hierarchies under increasing spectral gaps, and the concrete models
//! (dilation, anharmonic oscillators, torus, lattice) they are tested on.
//!
//! Everything numerical is generic over [`Real`] (`f32` or `f64`); the
//! aliases at the bottom of this file fix the scalar to `f64`.

pub mod adiabatic;
pub mod clusters;
pub mod error;
pub mod experiment;
pub mod fit;
pub mod linalg;
pub mod models;
pub mod propagator;
pub mod sampler;
pub mod scalar;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use scalar::{CMatrix, CVector, Real};
pub use spectral::{
    commutator, commutator_tau_scan, heisenberg_derivative, scale_operator_norm, sobolev_norm,
    OperatorMatrix, OperatorSampler, SpectralModel, StateVector,
};

pub type Model = SpectralModel<f64>;
pub type Operator = OperatorMatrix<f64>;
pub type State = StateVector<f64>;
pub type ModelF32 = SpectralModel<f32>;
pub type OperatorF32 = OperatorMatrix<f32>;
pub type StateF32 = StateVector<f32>;
