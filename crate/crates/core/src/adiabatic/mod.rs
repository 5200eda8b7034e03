//! Adiabatic hierarchy: cluster projectors Π_{m,j}(t) of H_m(t), counter-terms
//! B_m(t) = i Σ_j Π_{m,j} ∂_{(t,L)}Π_{m,j}, the recursion H_{m+1} = H_m + B_m
//! starting from H_0 = L, and the diagnostics built on it.
//!
//! Time derivatives are exact: every level is carried as a truncated Taylor
//! series in t (a [`jet::Jet`]) whose coefficients come from the analytic
//! derivatives of L and the projector recursion, so no finite differences
//! are nested across levels. B_{m,j} denotes the unfactored block
//! Π_{m,j}∂_{(t,L)}Π_{m,j}; the factor i is applied when B_m is assembled.

pub mod diagnostics;
pub mod jet;

pub use diagnostics::{
    adiabatic_propagate, duhamel_compare, intertwining_defect, intertwining_order, norm_equivalence,
    proof_chain_decay, proof_chain_operators, AdiabaticGenerator, AdiabaticRun, DuhamelReport,
    IntertwiningOrder, IntertwiningReport, NormEquivalenceReport, NormEquivalenceRow, ProofChain,
    ProofChainDecay, ProofChainReport, TailRow,
};

use crate::clusters::{delta_exponent, detect_clusters, dyadic_regroup, perturbed_clusters, ClusterDecomposition, DetectOptions};
use crate::error::{Error, Result};
use crate::linalg::{barycentric_coefficients, chebyshev_nodes, chebyshev_weights, frobenius, hermitian_part, HermitianEigen};
use crate::scalar::{cast, imag_unit, real, to_f64, CMatrix, Real};
use crate::spectral::{OperatorMatrix, OperatorSampler, SpectralModel, StateVector};
use crate::stats::{log_log_fit, LineFit};
use jet::Jet;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Absolute hermiticity defect of B_m (relative to max(1, ‖B_m‖)) above which
/// the projector family is declared inconsistent.
pub const COUNTER_TERM_HERMITICITY_LIMIT: f64 = 1e-8;

/// Smallest singular value of 1 − L_{m,j} below which a proof-chain step is
/// declared singular.
pub const SINGULAR_STEP_LIMIT: f64 = 1e-8;

/// Chebyshev grid on which B_M(t) is tabulated for propagation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InterpolationWindow {
    pub start: f64,
    pub end: f64,
    pub nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HierarchyOptions {
    /// Depth M: levels m = 0..=M are built.
    pub depth: usize,
    /// Times at which per-level diagnostics are recorded.
    pub sample_times: Vec<f64>,
    /// Whether to measure the projector algebra residuals (costly for many clusters).
    #[serde(default = "default_true")]
    pub check_algebra: bool,
    #[serde(default)]
    pub interpolation: Option<InterpolationWindow>,
    /// Inclusive 1-based block window for the decay fits.
    #[serde(default = "default_decay_window")]
    pub decay_window: (usize, usize),
}

fn default_true() -> bool {
    true
}

fn default_decay_window() -> (usize, usize) {
    (3, 8)
}

impl HierarchyOptions {
    pub fn new(depth: usize, sample_times: Vec<f64>) -> Self {
        Self {
            depth,
            sample_times,
            check_algebra: true,
            interpolation: None,
            decay_window: default_decay_window(),
        }
    }

    pub fn with_interpolation(mut self, start: f64, end: f64, nodes: usize) -> Self {
        self.interpolation = Some(InterpolationWindow { start, end, nodes });
        self
    }

    pub fn with_check_algebra(mut self, check: bool) -> Self {
        self.check_algebra = check;
        self
    }

    pub fn with_decay_window(mut self, lo: usize, hi: usize) -> Self {
        self.decay_window = (lo, hi);
        self
    }
}

/// Residuals of the projector algebra at one level and time (Frobenius norms).
#[derive(Clone, Copy, Debug, Default, Serialize, PartialEq)]
pub struct ProjectorAlgebra {
    /// max_j ‖Π_j² − Π_j‖.
    pub idempotency: f64,
    /// max_j ‖Π_j − Π_j*‖.
    pub hermiticity: f64,
    /// max_{i≠j} ‖Π_iΠ_j‖.
    pub orthogonality: f64,
    /// ‖Σ_j Π_j − I‖.
    pub completeness: f64,
}

impl ProjectorAlgebra {
    pub fn max(&self) -> f64 {
        self.idempotency.max(self.hermiticity).max(self.orthogonality).max(self.completeness)
    }
}

/// Diagnostics of one level at one time.
#[derive(Clone, Debug, Serialize)]
pub struct LevelSample {
    pub m: usize,
    pub t: f64,
    /// rank Π_{m,j}(t) = number of eigenvalues of H_m(t) in σ̃_j.
    pub ranks: Vec<usize>,
    pub algebra: Option<ProjectorAlgebra>,
    /// ‖B_m − B_m*‖ / max(1, ‖B_m‖) before symmetrization.
    pub counter_term_hermiticity: f64,
    /// max_j ‖∂_{(t,L−B_m)}Π_{m,j}‖, equivalently the residual of the
    /// homological equation i[B_m, Π_{m,j}] = ∂_{(t,L)}Π_{m,j}.
    pub stationarity_residual: f64,
    /// ‖B_{m,j}(t)‖ for every block (operator norm).
    pub block_norms: Vec<f64>,
    /// ‖B_m(t)‖ (operator norm).
    pub counter_term_norm: f64,
}

/// Every level of the hierarchy evaluated at one time, with Taylor data.
pub struct Level<T: Real> {
    pub m: usize,
    pub t: T,
    /// Eigen-decomposition of H_m(t); columns grouped by cluster.
    pub eigen: HermitianEigen<T>,
    /// Eigenvalue index → 0-based cluster index.
    pub labels: Vec<usize>,
    /// H_m as a jet in the reference basis.
    pub h: Jet<T>,
    /// Π_{m,j} as jets in the eigenbasis of H_m(t).
    projector_jets: Vec<Jet<T>>,
    /// B̂_{m,j}(t) in the eigenbasis (unfactored).
    blocks: Vec<CMatrix<T>>,
    /// B_m as a hermitian jet in the reference basis (empty for the
    /// order-0 level past the depth).
    pub counter_term: Jet<T>,
    pub sample: Option<LevelSample>,
}

impl<T: Real> Level<T> {
    pub fn clusters(&self) -> usize {
        self.projector_jets.len()
    }

    fn columns(&self, j: usize) -> std::ops::Range<usize> {
        let first = self.labels.iter().position(|&c| c == j).unwrap_or(0);
        let count = self.labels.iter().filter(|&&c| c == j).count();
        first..first + count
    }

    /// Π_{m,j}(t) for 0-based cluster index j.
    pub fn projector(&self, j: usize) -> CMatrix<T> {
        let cols = self.eigen.vectors.columns(self.columns(j).start, self.columns(j).len());
        &cols * cols.adjoint()
    }

    /// ∂_t^order Π_{m,j}(t), available up to the jet length of this level.
    pub fn projector_derivative(&self, j: usize, order: usize) -> Result<CMatrix<T>> {
        let pj = &self.projector_jets[j];
        let c = jet::derivative(pj, order).ok_or(Error::DerivativeUnavailable {
            requested: order,
            max_order: pj.len() - 1,
        })?;
        Ok(&self.eigen.vectors * c * self.eigen.vectors.adjoint())
    }

    /// Unfactored block B_{m,j}(t) = Π_{m,j}∂_{(t,L)}Π_{m,j}.
    pub fn block(&self, j: usize) -> CMatrix<T> {
        &self.eigen.vectors * &self.blocks[j] * self.eigen.vectors.adjoint()
    }

    /// B_m(t).
    pub fn counter_term_at(&self) -> Option<&CMatrix<T>> {
        self.counter_term.first()
    }

    /// H_m(t).
    pub fn operator(&self) -> &CMatrix<T> {
        &self.h[0]
    }

    /// Λ_m(t) = Σ_j 2^{(j−1)(μ+1)} Π_{m,j}(t).
    pub fn lambda(&self, mu: T) -> LambdaOperator<T> {
        LambdaOperator::new(mu, (0..self.clusters()).map(|j| self.projector(j)).collect())
    }
}

/// Λ_m(t) = Σ_j 2^{(j−1)(μ+1)} Π_{m,j}(t).
#[derive(Clone, Debug)]
pub struct LambdaOperator<T: Real> {
    pub weights: Vec<T>,
    pub projectors: Vec<CMatrix<T>>,
}

impl<T: Real> LambdaOperator<T> {
    pub fn new(mu: T, projectors: Vec<CMatrix<T>>) -> Self {
        let two = cast::<T>(2.0);
        let weights = (0..projectors.len())
            .map(|j| two.powf(cast::<T>(j as f64) * (mu + T::one())))
            .collect();
        Self { weights, projectors }
    }

    /// Λ^p ψ.
    pub fn apply_power(&self, p: u32, psi: &StateVector<T>) -> StateVector<T> {
        let mut out = psi.coords.clone() * real(T::zero());
        for (w, pj) in self.weights.iter().zip(&self.projectors) {
            out += pj * &psi.coords * real(w.powi(p as i32));
        }
        StateVector::new(out)
    }

    pub fn matrix(&self) -> CMatrix<T> {
        let n = self.projectors.first().map(|p| p.nrows()).unwrap_or(0);
        let mut out = CMatrix::<T>::zeros(n, n);
        for (w, pj) in self.weights.iter().zip(&self.projectors) {
            out += pj * real(*w);
        }
        out
    }
}

/// Per-level record over the sample times.
#[derive(Clone, Debug, Serialize)]
pub struct LevelRecord {
    pub m: usize,
    pub samples: Vec<LevelSample>,
}

impl LevelRecord {
    /// sup over sample times of ‖B_{m,j}‖, per block.
    pub fn max_block_norms(&self) -> Vec<f64> {
        let n = self.samples.first().map(|s| s.block_norms.len()).unwrap_or(0);
        (0..n)
            .map(|j| self.samples.iter().map(|s| s.block_norms[j]).fold(0.0, f64::max))
            .collect()
    }

    pub fn max_algebra_residual(&self) -> Option<f64> {
        self.samples.iter().filter_map(|s| s.algebra.map(|a| a.max())).reduce(f64::max)
    }

    pub fn max_stationarity_residual(&self) -> f64 {
        self.samples.iter().map(|s| s.stationarity_residual).fold(0.0, f64::max)
    }
}

/// B_M(t) tabulated on Chebyshev–Lobatto nodes.
#[derive(Clone, Debug)]
pub struct CounterTermTable<T: Real> {
    pub window: InterpolationWindow,
    pub nodes: Vec<T>,
    weights: Vec<T>,
    pub values: Vec<CMatrix<T>>,
    /// ‖B_{M,j}‖ at each node.
    pub block_norms: Vec<Vec<f64>>,
}

impl<T: Real> CounterTermTable<T> {
    pub fn contains(&self, t: f64) -> bool {
        let tol = 1e-12 * (self.window.end - self.window.start).abs().max(1.0);
        t >= self.window.start - tol && t <= self.window.end + tol
    }

    /// Barycentric interpolant of B_M at t (clamped to the window).
    pub fn eval(&self, t: T) -> CMatrix<T> {
        let (a, b) = (cast::<T>(self.window.start), cast::<T>(self.window.end));
        let tc = if t < a { a } else if t > b { b } else { t };
        let c = barycentric_coefficients(&self.nodes, &self.weights, tc);
        let mut out = self.values[0].clone() * real(c[0]);
        for (ck, v) in c.iter().zip(&self.values).skip(1) {
            out += v * real(*ck);
        }
        out
    }

    /// max over the nodes of ‖B_{M,j}‖, per block.
    pub fn max_block_norms(&self) -> Vec<f64> {
        let n = self.block_norms.first().map(|v| v.len()).unwrap_or(0);
        (0..n)
            .map(|j| self.block_norms.iter().map(|v| v[j]).fold(0.0, f64::max))
            .collect()
    }
}

/// Result of [`build_hierarchy`].
pub struct AdiabaticHierarchy<T: Real> {
    pub model: SpectralModel<T>,
    pub generator: Arc<dyn OperatorSampler<T>>,
    /// The enlarged clusters σ̃_j.
    pub decomposition: ClusterDecomposition<T>,
    pub depth: usize,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
    pub j: u32,
    pub levels: Vec<LevelRecord>,
    pub table: Option<CounterTermTable<T>>,
    pub decay_window: (usize, usize),
}

/// Decay fit of sup_t ‖B_{m,j}‖ against Δ̃_{j−1}.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    pub m: usize,
    pub window: (usize, usize),
    pub fit: Option<LineFit>,
    /// −δ(1+m).
    pub bound: f64,
    /// slope ≤ bound + 0.15.
    pub passed: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct LevelSummary {
    pub m: usize,
    pub max_block_norms: Vec<f64>,
    pub max_counter_term_norm: f64,
    pub max_algebra_residual: Option<f64>,
    pub max_stationarity_residual: f64,
    pub max_counter_term_hermiticity: f64,
    pub decay: DecayFit,
}

/// JSON summary of a hierarchy.
#[derive(Clone, Debug, Serialize)]
pub struct HierarchySummary {
    pub depth: usize,
    pub j: u32,
    pub mu: f64,
    pub nu: f64,
    pub delta: f64,
    /// Enlarged cluster intervals [lo, hi] with their eigenvalue counts.
    pub clusters: Vec<(f64, f64, usize)>,
    /// Δ̃_{j−1} per block.
    pub block_gaps: Vec<f64>,
    pub sample_times: Vec<f64>,
    pub levels: Vec<LevelSummary>,
    /// Blocks j where sup_t ‖B_{m,j}‖ increases with m (flagged, not failed).
    pub monotonicity_violations: Vec<(usize, usize)>,
    pub samples: Vec<LevelRecord>,
}

/// The σ̃_j used by the hierarchy: detected clusters, dyadically regrouped
/// with parameter J and enlarged by Δ̃_{j−1}/4.
pub fn adiabatic_decomposition<T: Real>(model: &SpectralModel<T>, j: u32, opts: &DetectOptions) -> Result<ClusterDecomposition<T>> {
    perturbed_clusters(&dyadic_regroup(&detect_clusters(model, opts)?, j)?)
}

struct Context<'a, T: Real> {
    generator: &'a dyn OperatorSampler<T>,
    dec: &'a ClusterDecomposition<T>,
    depth: usize,
}

/// Spectral norm of the rows `rows` of x, via the Gram matrix.
fn row_block_norm<T: Real>(x: &CMatrix<T>, rows: std::ops::Range<usize>) -> f64 {
    if rows.is_empty() {
        return 0.0;
    }
    let sub = x.rows(rows.start, rows.len());
    let gram = &sub * sub.adjoint();
    let eig = HermitianEigen::new(&gram);
    to_f64(eig.values.last().copied().unwrap_or(T::zero()).max(T::zero()).sqrt())
}

fn hermitian_norm<T: Real>(m: &CMatrix<T>) -> f64 {
    let eig = HermitianEigen::new(&hermitian_part(m));
    eig.values.iter().map(|&v| to_f64(v).abs()).fold(0.0, f64::max)
}

fn level_at<T: Real>(ctx: &Context<'_, T>, m: usize, t: T, h: Jet<T>, l0: &CMatrix<T>, diagnose: bool, algebra: bool) -> Result<Level<T>> {
    let eigen = HermitianEigen::new(&h[0]);
    let dec = ctx.dec;
    let mut labels = Vec::with_capacity(eigen.values.len());
    for (k, &lam) in eigen.values.iter().enumerate() {
        let expected = dec.member_index[k];
        match dec.locate(lam) {
            Some(c) if c == expected => labels.push(c),
            Some(_) | None => {
                return Err(Error::ClusterEscape {
                    level: m,
                    t: to_f64(t),
                    eigenvalue: to_f64(lam),
                    nearest: dec.nearest(lam) + 1,
                })
            }
        }
    }
    let n_clusters = dec.len();
    let masks: Vec<Vec<bool>> = (0..n_clusters).map(|j| labels.iter().map(|&c| c == j).collect()).collect();
    let len = h.len();
    let mut hhat = vec![CMatrix::<T>::zeros(0, 0)];
    hhat.extend(jet::to_basis(&eigen.vectors, &h[1..]));
    let projector_jets: Vec<Jet<T>> = masks.iter().map(|mask| jet::projector_jet(&eigen.values, mask, &hhat)).collect();
    if len == 1 {
        return Ok(Level {
            m,
            t,
            eigen,
            labels,
            h,
            projector_jets,
            blocks: Vec::new(),
            counter_term: Vec::new(),
            sample: None,
        });
    }
    // ∂_{(t,L)}Π = ∂_tΠ − i[W, Π] with W = H_m − L, since [H_m, Π] = 0.
    let w_hat: Option<Jet<T>> = if m == 0 {
        None
    } else {
        let lj = jet::from_derivatives(
            (0..len - 1)
                .map(|k| ctx.generator.derivative(t, k).map(|d| d.into_entries()))
                .collect::<Result<Vec<_>>>()?,
        );
        let w: Vec<CMatrix<T>> = h.iter().zip(&lj).map(|(a, b)| a - b).collect();
        Some(jet::to_basis(&eigen.vectors, &w))
    };
    let mut b_hat: Jet<T> = vec![CMatrix::zeros(h[0].nrows(), h[0].ncols()); len - 1];
    let mut heis0 = Vec::with_capacity(n_clusters);
    let mut blocks = Vec::with_capacity(n_clusters);
    for pj in &projector_jets {
        let mut f = jet::differentiate(pj);
        if let Some(w) = &w_hat {
            let c = jet::commutator(w, pj, len - 1);
            for (fl, cl) in f.iter_mut().zip(c) {
                *fl -= cl * imag_unit::<T>();
            }
        }
        let bj = jet::mul(pj, &f, len - 1);
        for (acc, x) in b_hat.iter_mut().zip(&bj) {
            *acc += x;
        }
        heis0.push(f.swap_remove(0));
        blocks.push(bj.into_iter().next().expect("nonempty jet"));
    }
    let b_hat = jet::times_i(&b_hat);
    let b_norm0 = frobenius(&b_hat[0]);
    let defect = to_f64(frobenius(&(&b_hat[0] - b_hat[0].adjoint()))) / to_f64(b_norm0).max(1.0);
    if defect > COUNTER_TERM_HERMITICITY_LIMIT {
        return Err(Error::ProjectorInconsistent { defect });
    }
    let counter_term: Jet<T> = jet::from_basis(&eigen.vectors, &b_hat).iter().map(hermitian_part).collect();
    let sample = if diagnose {
        let ranks: Vec<usize> = masks.iter().map(|m| m.iter().filter(|&&b| b).count()).collect();
        // Stationarity with the true L: ∂_tΠ + i[L̂, Π] − i[B̂, Π].
        let l_hat = eigen.vectors.ad_mul(&(l0 * &eigen.vectors));
        let b0 = hermitian_part(&b_hat[0]);
        let mut stationarity = 0.0f64;
        for (j, mask) in masks.iter().enumerate() {
            let dp = &projector_jets[j][1];
            let r = dp + (jet::mask_commutator(&l_hat, mask) - jet::mask_commutator(&b0, mask)) * imag_unit::<T>();
            stationarity = stationarity.max(to_f64(frobenius(&r)));
        }
        let block_norms: Vec<f64> = (0..n_clusters)
            .map(|j| {
                let first = labels.iter().position(|&c| c == j).unwrap_or(0);
                row_block_norm(&heis0[j], first..first + ranks[j])
            })
            .collect();
        let algebra = algebra.then(|| projector_algebra(&eigen.vectors, &labels, n_clusters));
        Some(LevelSample {
            m,
            t: to_f64(t),
            ranks,
            algebra,
            counter_term_hermiticity: defect,
            stationarity_residual: stationarity,
            block_norms,
            counter_term_norm: hermitian_norm(&counter_term[0]),
        })
    } else {
        None
    };
    Ok(Level {
        m,
        t,
        eigen,
        labels,
        h,
        projector_jets,
        blocks,
        counter_term,
        sample,
    })
}

fn projector_algebra<T: Real>(e: &CMatrix<T>, labels: &[usize], n_clusters: usize) -> ProjectorAlgebra {
    let n = e.nrows();
    let projectors: Vec<CMatrix<T>> = (0..n_clusters)
        .map(|j| {
            let first = labels.iter().position(|&c| c == j).unwrap_or(0);
            let count = labels.iter().filter(|&&c| c == j).count();
            let cols = e.columns(first, count);
            &cols * cols.adjoint()
        })
        .collect();
    let mut out = ProjectorAlgebra::default();
    let mut total = -CMatrix::<T>::identity(n, n);
    for (i, p) in projectors.iter().enumerate() {
        out.idempotency = out.idempotency.max(to_f64(frobenius(&(p * p - p))));
        out.hermiticity = out.hermiticity.max(to_f64(frobenius(&(p - p.adjoint()))));
        for q in &projectors[i + 1..] {
            out.orthogonality = out.orthogonality.max(to_f64(frobenius(&(p * q))));
        }
        total += p;
    }
    out.completeness = to_f64(frobenius(&total));
    out
}

/// Evaluates levels 0..=depth at t (plus the order-0 level depth + 1 when
/// `extra` is set).
fn levels_at<T: Real>(ctx: &Context<'_, T>, t: T, diagnose: bool, algebra: bool, extra: bool) -> Result<Vec<Level<T>>> {
    let len0 = ctx.depth + 2;
    let l_jet = jet::from_derivatives(
        (0..len0)
            .map(|k| ctx.generator.derivative(t, k).map(|d| d.into_entries()))
            .collect::<Result<Vec<_>>>()?,
    );
    let l0 = l_jet[0].clone();
    let mut h = l_jet;
    let mut out = Vec::with_capacity(ctx.depth + 2);
    for m in 0..=ctx.depth {
        let level = level_at(ctx, m, t, h.clone(), &l0, diagnose, algebra)?;
        h.truncate(h.len() - 1);
        for (hl, bl) in h.iter_mut().zip(&level.counter_term) {
            *hl += bl;
        }
        out.push(level);
    }
    if extra {
        out.push(level_at(ctx, ctx.depth + 1, t, h, &l0, false, false)?);
    }
    Ok(out)
}

/// Builds the hierarchy H_0 = L, H_{m+1} = H_m + B_m for m = 0..=M, checking
/// at every sample time and level that the spectrum stays inside the
/// enlarged clusters of `dec`, and tabulates B_M on the interpolation window.
pub fn build_hierarchy<T: Real>(
    model: &SpectralModel<T>,
    generator: Arc<dyn OperatorSampler<T>>,
    dec: ClusterDecomposition<T>,
    opts: &HierarchyOptions,
) -> Result<AdiabaticHierarchy<T>> {
    let n = model.dim();
    if generator.dim() != n || dec.member_index.len() != n {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: model {n}, generator {}, decomposition {}",
            generator.dim(),
            dec.member_index.len()
        )));
    }
    if generator.max_order() < opts.depth + 1 {
        return Err(Error::DerivativeUnavailable {
            requested: opts.depth + 1,
            max_order: generator.max_order(),
        });
    }
    let mu = to_f64(dec.mu);
    let nu = to_f64(generator.nu());
    let delta = to_f64(delta_exponent(dec.mu, generator.nu())?);
    let j = dec.j;
    let ctx = Context {
        generator: generator.as_ref(),
        dec: &dec,
        depth: opts.depth,
    };
    let per_time: Vec<Vec<LevelSample>> = opts
        .sample_times
        .par_iter()
        .map(|&t| {
            levels_at(&ctx, cast::<T>(t), true, opts.check_algebra, false)
                .map(|ls| ls.into_iter().filter_map(|l| l.sample).collect())
        })
        .collect::<Result<_>>()?;
    let levels = (0..=opts.depth)
        .map(|m| LevelRecord {
            m,
            samples: per_time.iter().map(|v| v[m].clone()).collect(),
        })
        .collect();
    let table = match opts.interpolation {
        None => None,
        Some(w) => {
            if w.nodes < 2 || !(w.end > w.start) {
                return Err(Error::InvalidInput("interpolation window needs start < end and at least 2 nodes".into()));
            }
            let nodes = chebyshev_nodes(cast::<T>(w.start), cast::<T>(w.end), w.nodes);
            let rows: Vec<(CMatrix<T>, Vec<f64>)> = nodes
                .par_iter()
                .map(|&t| {
                    let mut ls = levels_at(&ctx, t, true, false, false)?;
                    let top = ls.pop().expect("depth + 1 levels");
                    let norms = top.sample.map(|s| s.block_norms).unwrap_or_default();
                    Ok((top.counter_term.into_iter().next().expect("counter-term"), norms))
                })
                .collect::<Result<_>>()?;
            let (values, block_norms) = rows.into_iter().unzip();
            Some(CounterTermTable {
                window: w,
                nodes,
                weights: chebyshev_weights(w.nodes),
                values,
                block_norms,
            })
        }
    };
    Ok(AdiabaticHierarchy {
        model: model.clone(),
        generator,
        decomposition: dec,
        depth: opts.depth,
        mu,
        nu,
        delta,
        j,
        levels,
        table,
        decay_window: opts.decay_window,
    })
}

impl<T: Real> AdiabaticHierarchy<T> {
    fn context(&self) -> Context<'_, T> {
        Context {
            generator: self.generator.as_ref(),
            dec: &self.decomposition,
            depth: self.depth,
        }
    }

    /// All levels at time t. The order-0 level M + 1 is appended when
    /// `extra` is set.
    pub fn levels_at(&self, t: T, extra: bool) -> Result<Vec<Level<T>>> {
        levels_at(&self.context(), t, false, false, extra)
    }

    /// All levels at time t with their diagnostics, including the projector
    /// algebra residuals.
    pub fn diagnose_at(&self, t: T) -> Result<Vec<LevelSample>> {
        Ok(levels_at(&self.context(), t, true, true, false)?
            .into_iter()
            .filter_map(|l| l.sample)
            .collect())
    }

    /// Π_{m,j}(t) for every cluster j.
    pub fn cluster_projectors(&self, m: usize, t: T) -> Result<Vec<CMatrix<T>>> {
        let ls = self.levels_at(t, m > self.depth)?;
        let level = ls.get(m).ok_or_else(|| Error::InvalidInput(format!("level {m} beyond depth {}", self.depth)))?;
        Ok((0..level.clusters()).map(|j| level.projector(j)).collect())
    }

    /// ∂_t^order Π_{m,j}(t) for every cluster j; order ≤ M + 1 − m.
    pub fn projector_time_derivative(&self, m: usize, t: T, order: usize) -> Result<Vec<CMatrix<T>>> {
        let ls = self.levels_at(t, false)?;
        let level = ls.get(m).ok_or_else(|| Error::InvalidInput(format!("level {m} beyond depth {}", self.depth)))?;
        (0..level.clusters()).map(|j| level.projector_derivative(j, order)).collect()
    }

    /// B_m(t) and the unfactored blocks B_{m,j}(t).
    pub fn counter_term(&self, m: usize, t: T) -> Result<(OperatorMatrix<T>, Vec<CMatrix<T>>)> {
        let ls = self.levels_at(t, false)?;
        let level = ls.get(m).ok_or_else(|| Error::InvalidInput(format!("level {m} beyond depth {}", self.depth)))?;
        let b = level.counter_term_at().cloned().expect("levels up to the depth carry a counter-term");
        Ok((OperatorMatrix::new(b), (0..level.clusters()).map(|j| level.block(j)).collect()))
    }

    /// B_M(t), from the Chebyshev table when t lies in its window.
    pub fn top_counter_term(&self, t: T) -> Result<CMatrix<T>> {
        if let Some(table) = &self.table {
            if table.contains(to_f64(t)) {
                return Ok(table.eval(t));
            }
        }
        Ok(self.counter_term(self.depth, t)?.0.into_entries())
    }

    /// Δ̃_{j−1} for blocks j = 1..=n.
    pub fn block_gaps(&self) -> Vec<f64> {
        (1..=self.decomposition.len()).map(|j| to_f64(self.decomposition.block_gap_before(j))).collect()
    }

    /// Fit of log sup_t ‖B_{m,j}‖ against log Δ̃_{j−1} over the window.
    pub fn decay_fit(&self, m: usize, window: (usize, usize)) -> DecayFit {
        let norms = self.levels[m].max_block_norms();
        let gaps = self.block_gaps();
        let hi = window.1.min(norms.len());
        let lo = window.0.max(1);
        let (x, y): (Vec<f64>, Vec<f64>) = (lo..=hi).map(|j| (gaps[j - 1], norms[j - 1])).unzip();
        let fit = if x.len() >= 3 { log_log_fit(&x, &y).filter(|f| f.points >= 3) } else { None };
        let bound = -self.delta * (1.0 + m as f64);
        DecayFit {
            m,
            window: (lo, hi),
            fit,
            bound,
            passed: fit.map(|f| f.slope <= bound + 0.15),
        }
    }

    pub fn summary(&self) -> HierarchySummary {
        let levels: Vec<LevelSummary> = self
            .levels
            .iter()
            .map(|rec| LevelSummary {
                m: rec.m,
                max_block_norms: rec.max_block_norms(),
                max_counter_term_norm: rec.samples.iter().map(|s| s.counter_term_norm).fold(0.0, f64::max),
                max_algebra_residual: rec.max_algebra_residual(),
                max_stationarity_residual: rec.max_stationarity_residual(),
                max_counter_term_hermiticity: rec.samples.iter().map(|s| s.counter_term_hermiticity).fold(0.0, f64::max),
                decay: self.decay_fit(rec.m, self.decay_window),
            })
            .collect();
        let mut violations = Vec::new();
        for w in levels.windows(2) {
            for (j, (a, b)) in w[0].max_block_norms.iter().zip(&w[1].max_block_norms).enumerate() {
                if b > a {
                    violations.push((w[1].m, j + 1));
                }
            }
        }
        HierarchySummary {
            depth: self.depth,
            j: self.j,
            mu: self.mu,
            nu: self.nu,
            delta: self.delta,
            clusters: self
                .decomposition
                .clusters
                .iter()
                .map(|c| (to_f64(c.lo), to_f64(c.hi), c.count))
                .collect(),
            block_gaps: self.block_gaps(),
            sample_times: self.levels.first().map(|r| r.samples.iter().map(|s| s.t).collect()).unwrap_or_default(),
            levels,
            monotonicity_violations: violations,
            samples: self.levels.clone(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.summary())?)
    }
}
