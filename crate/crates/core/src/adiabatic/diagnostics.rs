//! Adiabatic propagation under L − B_M and the checks built on it:
//! intertwining, the Duhamel comparison with the full flow, norm
//! equivalence with Λ_m, and the proof-chain operators L, K, D.

use super::{AdiabaticHierarchy, CounterTermTable, Level};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, smallest_singular_value, spectral_norm, HermitianEigen};
use crate::propagator::{integrator_error_estimate, propagate, propagator_matrix, PropagatorConfig, Stepper, Trajectory};
use crate::scalar::{cast, cplx, imag_unit, japanese, real, to_f64, CMatrix, Real};
use crate::spectral::{check_order, sobolev_norm, OperatorMatrix, OperatorSampler, StateVector};
use crate::stats::{log_log_fit, LineFit};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;
use std::sync::Arc;

/// The adiabatic generator H_{ad,M}(t) = L(t) − B_M(t), with B_M read from the
/// Chebyshev table.
pub struct AdiabaticGenerator<T: Real> {
    generator: Arc<dyn OperatorSampler<T>>,
    table: CounterTermTable<T>,
}

impl<T: Real> AdiabaticGenerator<T> {
    pub fn counter_term(&self, t: T) -> CMatrix<T> {
        self.table.eval(t)
    }
}

impl<T: Real> OperatorSampler<T> for AdiabaticGenerator<T> {
    fn dim(&self) -> usize {
        self.generator.dim()
    }

    fn eval(&self, t: T) -> OperatorMatrix<T> {
        OperatorMatrix::new(self.generator.eval(t).into_entries() - self.table.eval(t))
    }

    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>> {
        check_order(order, 0)?;
        Ok(self.eval(t))
    }

    fn max_order(&self) -> usize {
        0
    }

    fn nu(&self) -> T {
        self.generator.nu()
    }
}

impl<T: Real> AdiabaticHierarchy<T> {
    /// H_{ad,M} backed by the Chebyshev table of B_M.
    pub fn adiabatic_generator(&self) -> Result<AdiabaticGenerator<T>> {
        let table = self
            .table
            .clone()
            .ok_or_else(|| Error::InvalidInput("hierarchy was built without an interpolation window".into()))?;
        Ok(AdiabaticGenerator {
            generator: self.generator.clone(),
            table,
        })
    }

    fn check_span(&self, cfg: &PropagatorConfig) -> Result<()> {
        let table = self
            .table
            .as_ref()
            .ok_or_else(|| Error::InvalidInput("hierarchy was built without an interpolation window".into()))?;
        if !(table.contains(cfg.t_span[0]) && table.contains(cfg.t_span[1])) {
            return Err(Error::InvalidInput(format!(
                "propagation span [{}, {}] leaves the interpolation window [{}, {}]",
                cfg.t_span[0], cfg.t_span[1], table.window.start, table.window.end
            )));
        }
        Ok(())
    }

    fn top_level_at(&self, t: T) -> Result<Level<T>> {
        let mut ls = self.levels_at(t, false)?;
        Ok(ls.swap_remove(self.depth))
    }
}

/// max_j ‖Π_{M,j}(t)U_ad(t,s) − U_ad(t,s)Π_{M,j}(s)‖ (operator norm).
#[derive(Clone, Debug, Serialize)]
pub struct IntertwiningReport {
    pub s: f64,
    pub t: f64,
    pub dt: f64,
    pub per_cluster: Vec<f64>,
    pub defect: f64,
}

fn defect_from<T: Real>(u: &CMatrix<T>, ps: &[CMatrix<T>], pt: &[CMatrix<T>], cfg: &PropagatorConfig) -> IntertwiningReport {
    let per_cluster: Vec<f64> = ps
        .iter()
        .zip(pt)
        .map(|(a, b)| to_f64(spectral_norm(&(b * u - u * a))))
        .collect();
    IntertwiningReport {
        s: cfg.t_span[0],
        t: cfg.t_span[1],
        dt: cfg.dt,
        defect: per_cluster.iter().copied().fold(0.0, f64::max),
        per_cluster,
    }
}

fn end_projectors<T: Real>(hier: &AdiabaticHierarchy<T>, cfg: &PropagatorConfig) -> Result<(Vec<CMatrix<T>>, Vec<CMatrix<T>>)> {
    let a = hier.top_level_at(cast(cfg.t_span[0]))?;
    let b = hier.top_level_at(cast(cfg.t_span[1]))?;
    Ok((
        (0..a.clusters()).map(|j| a.projector(j)).collect(),
        (0..b.clusters()).map(|j| b.projector(j)).collect(),
    ))
}

pub fn intertwining_defect<T: Real>(hier: &AdiabaticHierarchy<T>, cfg: &PropagatorConfig) -> Result<IntertwiningReport> {
    hier.check_span(cfg)?;
    let gen = hier.adiabatic_generator()?;
    let u = propagator_matrix(&gen, cfg)?;
    let (ps, pt) = end_projectors(hier, cfg)?;
    Ok(defect_from(&u, &ps, &pt, cfg))
}

/// Intertwining defect under successive halvings of dt, with the fitted order.
#[derive(Clone, Debug, Serialize)]
pub struct IntertwiningOrder {
    pub rows: Vec<IntertwiningReport>,
    pub fit: Option<LineFit>,
    /// Slope of log defect against log dt.
    pub order: Option<f64>,
}

pub fn intertwining_order<T: Real>(hier: &AdiabaticHierarchy<T>, cfg: &PropagatorConfig, halvings: usize) -> Result<IntertwiningOrder> {
    hier.check_span(cfg)?;
    let gen = hier.adiabatic_generator()?;
    let (ps, pt) = end_projectors(hier, cfg)?;
    let mut rows = Vec::with_capacity(halvings + 1);
    for k in 0..=halvings {
        let c = PropagatorConfig {
            dt: cfg.dt / 2f64.powi(k as i32),
            ..cfg.clone()
        };
        let u = propagator_matrix(&gen, &c)?;
        rows.push(defect_from(&u, &ps, &pt, &c));
    }
    let dts: Vec<f64> = rows.iter().map(|r| r.dt).collect();
    let ds: Vec<f64> = rows.iter().map(|r| r.defect).collect();
    let fit = log_log_fit(&dts, &ds).filter(|f| f.points == rows.len());
    Ok(IntertwiningOrder {
        order: fit.map(|f| f.slope),
        fit,
        rows,
    })
}

/// Trajectory under L − B_M with the intertwining report and the range of
/// the recorded H^k norms.
pub struct AdiabaticRun<T: Real> {
    pub trajectory: Trajectory<T>,
    pub intertwining: IntertwiningReport,
    /// sup over recorded times of ‖ψ(t)‖_k, per k.
    pub sup_norms: Vec<f64>,
    /// sup/inf of ‖ψ(t)‖_k over recorded times, per k.
    pub norm_ratio: Vec<f64>,
}

pub fn adiabatic_propagate<T: Real>(
    hier: &AdiabaticHierarchy<T>,
    psi_s: &StateVector<T>,
    cfg: &PropagatorConfig,
    ks: &[T],
) -> Result<AdiabaticRun<T>> {
    hier.check_span(cfg)?;
    let gen = hier.adiabatic_generator()?;
    let trajectory = propagate(&hier.model, &gen, psi_s, cfg, ks)?;
    let intertwining = intertwining_defect(hier, cfg)?;
    let mut sup_norms = Vec::with_capacity(ks.len());
    let mut norm_ratio = Vec::with_capacity(ks.len());
    for series in &trajectory.norms {
        let xs: Vec<f64> = series.iter().map(|&x| to_f64(x)).collect();
        let hi = xs.iter().copied().fold(0.0, f64::max);
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        sup_norms.push(hi);
        norm_ratio.push(if lo > 0.0 { hi / lo } else { f64::INFINITY });
    }
    Ok(AdiabaticRun {
        trajectory,
        intertwining,
        sup_norms,
        norm_ratio,
    })
}

/// Per-block check ‖Π_{M,j}(t)U(t,s)ψ‖ ≤ ‖Π_{M,j}(s)ψ‖ + ⟨t−s⟩·sup‖B_{M,j}‖·‖ψ‖.
#[derive(Clone, Debug, Serialize)]
pub struct TailRow {
    pub block: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub block_norm: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DuhamelReport {
    /// ‖U(t,s)ψ − U_ad(t,s)ψ + i∫U_ad(t,r)B_M(r)U(r,s)ψ dr‖.
    pub residual: f64,
    /// Richardson estimate of the global integrator error of U(t,s)ψ.
    pub error_estimate: f64,
    pub ratio: f64,
    /// residual ≤ 10·error_estimate.
    pub passed: bool,
    pub steps: usize,
    pub tail: Vec<TailRow>,
}

/// Evaluates both sides of the Duhamel formula on the propagation grid, the
/// integral by the trapezoid rule.
pub fn duhamel_compare<T: Real>(hier: &AdiabaticHierarchy<T>, psi_s: &StateVector<T>, cfg: &PropagatorConfig) -> Result<DuhamelReport> {
    cfg.validate()?;
    hier.check_span(cfg)?;
    let gen = hier.adiabatic_generator()?;
    let full = Stepper::new(hier.generator.as_ref(), cfg.integrator);
    let adia = Stepper::new(&gen, cfg.integrator);
    let n = psi_s.dim();
    let (steps, h) = cfg.steps();
    let s = cfg.t_span[0];
    let mut psi = CMatrix::from_column_slice(n, 1, psi_s.coords.as_slice());
    let mut u = CMatrix::<T>::identity(n, n);
    let half = real(cast::<T>(0.5));
    let mut integral = gen.counter_term(cast(s)) * &psi * half;
    for i in 0..steps {
        let t0 = cast::<T>(s + i as f64 * h);
        psi = full.step(t0, cast(h), &psi)?;
        u = adia.step(t0, cast(h), &u)?;
        let t1 = cast::<T>(s + (i + 1) as f64 * h);
        let g = u.ad_mul(&(gen.counter_term(t1) * &psi));
        if i + 1 == steps {
            integral += g * half;
        } else {
            integral += g;
        }
    }
    integral *= real(cast::<T>(h));
    let start = CMatrix::from_column_slice(n, 1, psi_s.coords.as_slice());
    let rhs = &u * (start - integral * imag_unit::<T>());
    let residual = to_f64(frobenius(&(&psi - rhs)));
    let error_estimate = to_f64(integrator_error_estimate(hier.generator.as_ref(), psi_s, cfg)?);
    let (ps, pt) = end_projectors(hier, cfg)?;
    let sups = hier.table.as_ref().map(|t| t.max_block_norms()).unwrap_or_default();
    let bracket = to_f64(japanese(cast::<T>(cfg.t_span[1] - s)));
    let norm0 = to_f64(psi_s.norm());
    let tail = ps
        .iter()
        .zip(&pt)
        .enumerate()
        .map(|(j, (a, b))| {
            let lhs = to_f64((b * &psi).norm());
            let block_norm = sups.get(j).copied().unwrap_or(0.0);
            let rhs = to_f64((a * &psi_s.coords).norm()) + bracket * block_norm * norm0;
            TailRow {
                block: j + 1,
                lhs,
                rhs,
                block_norm,
                holds: lhs <= rhs * (1.0 + 1e-9) + 1e-12,
            }
        })
        .collect();
    Ok(DuhamelReport {
        residual,
        error_estimate,
        ratio: if error_estimate > 0.0 { residual / error_estimate } else if residual == 0.0 { 0.0 } else { f64::INFINITY },
        passed: residual <= 10.0 * error_estimate,
        steps,
        tail,
    })
}

/// Two-sided constants for one power p.
#[derive(Clone, Debug, Serialize)]
pub struct NormEquivalenceRow {
    pub p: u32,
    /// min/max of ‖(H_ad + c0)^pψ‖ / ‖ψ‖_{2p}.
    pub sobolev: (f64, f64),
    /// min/max of ‖(H_ad + c0)^pψ‖ / (2^{Jp(μ+1)}‖Λ^pψ‖).
    pub lambda: (f64, f64),
    /// Both constants are positive and finite.
    pub holds: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormEquivalenceReport {
    pub m: usize,
    pub c0: f64,
    pub vectors: usize,
    pub times: Vec<f64>,
    pub rows: Vec<NormEquivalenceRow>,
}

/// Measures c1, c2 in c1‖ψ‖_{2p} ≤ ‖(H_{ad,m}+c0)^pψ‖ ≤ c2‖ψ‖_{2p} and
/// c1·2^{Jp(μ+1)}‖Λ_m^pψ‖ ≤ ‖(H_{ad,m}+c0)^pψ‖ ≤ c2·2^{Jp(μ+1)}‖Λ_m^pψ‖ over
/// the observed basis vectors plus `vectors` seeded Gaussian vectors on the
/// observed modes.
pub fn norm_equivalence<T: Real>(
    hier: &AdiabaticHierarchy<T>,
    m: usize,
    ps: &[u32],
    times: &[f64],
    vectors: usize,
    seed: u64,
    c0: Option<f64>,
) -> Result<NormEquivalenceReport> {
    if m > hier.depth {
        return Err(Error::InvalidInput(format!("level {m} beyond depth {}", hier.depth)));
    }
    if times.is_empty() || vectors == 0 {
        return Err(Error::InvalidInput("norm equivalence needs sample times and vectors".into()));
    }
    let mu = cast::<T>(hier.mu);
    let mut per_time = Vec::with_capacity(times.len());
    let mut min_eig = f64::INFINITY;
    for &t in times {
        let ls = hier.levels_at(cast(t), false)?;
        let level = &ls[m];
        let b = level.counter_term_at().expect("levels up to the depth carry a counter-term");
        let h_ad = hier.generator.eval(cast(t)).into_entries() - b;
        let eig = HermitianEigen::new(&h_ad);
        min_eig = min_eig.min(to_f64(eig.values[0]));
        per_time.push((eig, level.lambda(mu)));
    }
    let c0 = match c0 {
        Some(c) => {
            if min_eig + c <= 0.0 {
                return Err(Error::ShiftTooSmall { min_eigenvalue: min_eig + c });
            }
            c
        }
        None => 1.0 + (-min_eig).max(0.0),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = hier.model.dim();
    let obs = hier.model.observe_dim();
    // Basis probes pin the diagonal extremes; random vectors probe the mixing.
    let probes = (0..obs).map(|i| StateVector::basis(n, i));
    let samples: Vec<StateVector<T>> = probes
        .chain((0..vectors).map(|_| {
            let coords = nalgebra::DVector::from_fn(n, |i, _| {
                if i < obs {
                    let re: f64 = StandardNormal.sample(&mut rng);
                    let im: f64 = StandardNormal.sample(&mut rng);
                    cplx(cast::<T>(re), cast::<T>(im))
                } else {
                    cplx(T::zero(), T::zero())
                }
            });
            StateVector::new(coords).normalized()
        }))
        .collect();
    let scale_base = 2f64.powf(hier.j as f64 * (hier.mu + 1.0));
    let c0t = cast::<T>(c0);
    let mut rows = Vec::with_capacity(ps.len());
    for &p in ps {
        let mut sobolev = (f64::INFINITY, 0.0f64);
        let mut lambda = (f64::INFINITY, 0.0f64);
        for (eig, lambda_op) in &per_time {
            for psi in &samples {
                let a = to_f64(eig.apply_fn(|l| real((l + c0t).powi(p as i32)), &psi.coords).norm());
                let b = to_f64(sobolev_norm(&hier.model, psi, cast::<T>(2.0 * p as f64))?);
                let c = scale_base.powi(p as i32) * to_f64(lambda_op.apply_power(p, psi).norm());
                let (rh, rl) = (a / b, a / c);
                sobolev = (sobolev.0.min(rh), sobolev.1.max(rh));
                lambda = (lambda.0.min(rl), lambda.1.max(rl));
            }
        }
        let holds = sobolev.0 > 0.0 && lambda.0 > 0.0 && sobolev.1.is_finite() && lambda.1.is_finite();
        rows.push(NormEquivalenceRow { p, sobolev, lambda, holds });
    }
    Ok(NormEquivalenceReport {
        m,
        c0,
        vectors,
        times: times.to_vec(),
        rows,
    })
}

/// L_{m,j} = Π_{m+1,j} − Π_{m,j}, K_{m,j} = Π_{m,j}L_{m,j}, D_{m,j} = Π_{m+1,j}L_{m,j}.
pub struct ProofChain<T: Real> {
    pub l: OperatorMatrix<T>,
    pub k: OperatorMatrix<T>,
    pub d: OperatorMatrix<T>,
    pub report: ProofChainReport,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProofChainReport {
    pub m: usize,
    pub block: usize,
    pub t: f64,
    /// Δ̃_{j−1}.
    pub gap: f64,
    pub l_norm: f64,
    pub k_norm: f64,
    pub d_norm: f64,
    /// Smallest singular value of 1 − L_{m,j}.
    pub smallest_singular: f64,
    /// ‖D_{m,j} − Π_{m+1,j}K_{m,j}(1−L_{m,j})^{−1}‖.
    pub d_residual_same_level: f64,
    /// ‖D_{m,j} − Π_{m+1,j}K_{m+1,j}(1−L_{m,j})^{−1}‖ (the closure as printed).
    pub d_residual_next_level: f64,
    /// Which closure of identity (D) vanishes: "K_m", "K_m+1", "both" or "neither".
    pub d_closes_with: String,
    /// ‖B_{m+1,j}‖, the scale for the two residuals below.
    pub b_next_norm: f64,
    /// Residual of B_{m+1,j} = i D ∂_{(t,L)}Π_{m+1,j} + Π_{m+1,j}(∂_tK − i[W,K]),
    /// W = Σ_{i≤m} B_i, as printed.
    pub b_residual_printed: f64,
    /// Residual of the same identity without the factor i on the D term.
    pub b_residual_corrected: f64,
}

const CLOSURE_TOLERANCE: f64 = 1e-8;

/// Proof-chain operators at level m (< M) for the 0-based cluster index j.
pub fn proof_chain_operators<T: Real>(hier: &AdiabaticHierarchy<T>, m: usize, j: usize, t: T) -> Result<ProofChain<T>> {
    if m + 1 > hier.depth {
        return Err(Error::InvalidInput(format!(
            "proof chain at level {m} needs depth at least {}, hierarchy has {}",
            m + 1,
            hier.depth
        )));
    }
    let ls = hier.levels_at(t, true)?;
    chain_from_levels(hier, &ls, m, j, t)
}

fn chain_from_levels<T: Real>(hier: &AdiabaticHierarchy<T>, ls: &[Level<T>], m: usize, j: usize, t: T) -> Result<ProofChain<T>> {
    let n = hier.model.dim();
    if j >= ls[m].clusters() {
        return Err(Error::InvalidInput(format!("cluster index {j} out of range")));
    }
    let id = CMatrix::<T>::identity(n, n);
    let p = ls[m].projector(j);
    let q = ls[m + 1].projector(j);
    let r = ls[m + 2].projector(j);
    let l = &q - &p;
    let k = &p * &l;
    let d = &q * &l;
    let one_minus = &id - &l;
    let smallest = to_f64(smallest_singular_value(&one_minus));
    if smallest < super::SINGULAR_STEP_LIMIT {
        return Err(Error::SingularPerturbationStep { smallest });
    }
    let inv = one_minus
        .try_inverse()
        .ok_or(Error::SingularPerturbationStep { smallest })?;
    let k_next = &q * (&r - &q);
    let d_same = to_f64(frobenius(&(&d - &q * &k * &inv)));
    let d_next = to_f64(frobenius(&(&d - &q * &k_next * &inv)));
    let scale = to_f64(frobenius(&d)).max(1e-300);
    let closes = |x: f64| x <= CLOSURE_TOLERANCE * scale.max(1.0);
    let d_closes_with = match (closes(d_same), closes(d_next)) {
        (true, true) => "both",
        (true, false) => "K_m",
        (false, true) => "K_m+1",
        (false, false) => "neither",
    }
    .to_string();

    let i = imag_unit::<T>();
    let l_op = hier.generator.eval(t).into_entries();
    let dp = ls[m].projector_derivative(j, 1)?;
    let dq = ls[m + 1].projector_derivative(j, 1)?;
    let heis_q = &dq + (&l_op * &q - &q * &l_op) * i;
    let dk = &dp * (&q - &p) + &p * (&dq - &dp);
    let w = ls[m + 1].operator() - &l_op;
    let second = &q * (dk - (&w * &k - &k * &w) * i);
    let b_next = ls[m + 1].block(j);
    let first = &d * &heis_q;
    let b_printed = to_f64(frobenius(&(&b_next - (&first * i + &second))));
    let b_corrected = to_f64(frobenius(&(&b_next - (&first + &second))));

    let report = ProofChainReport {
        m,
        block: j + 1,
        t: to_f64(t),
        gap: to_f64(hier.decomposition.block_gap_before(j + 1)),
        l_norm: to_f64(spectral_norm(&l)),
        k_norm: to_f64(spectral_norm(&k)),
        d_norm: to_f64(spectral_norm(&d)),
        smallest_singular: smallest,
        d_residual_same_level: d_same,
        d_residual_next_level: d_next,
        d_closes_with,
        b_next_norm: to_f64(spectral_norm(&b_next)),
        b_residual_printed: b_printed,
        b_residual_corrected: b_corrected,
    };
    Ok(ProofChain {
        l: OperatorMatrix::new(l),
        k: OperatorMatrix::new(k),
        d: OperatorMatrix::new(d),
        report,
    })
}

/// Proof-chain norms for every block at level m with log-log slopes against Δ̃_{j−1}.
#[derive(Clone, Debug, Serialize)]
pub struct ProofChainDecay {
    pub rows: Vec<ProofChainReport>,
    pub l_fit: Option<LineFit>,
    pub k_fit: Option<LineFit>,
    pub d_fit: Option<LineFit>,
}

/// Evaluates the proof chain for all blocks at one time; slopes are fitted
/// over blocks j ≥ 2 with nonzero norms.
pub fn proof_chain_decay<T: Real>(hier: &AdiabaticHierarchy<T>, m: usize, t: T) -> Result<ProofChainDecay> {
    if m + 1 > hier.depth {
        return Err(Error::InvalidInput(format!("proof chain at level {m} needs depth at least {}", m + 1)));
    }
    let ls = hier.levels_at(t, true)?;
    let rows: Vec<ProofChainReport> = (0..ls[m].clusters())
        .map(|j| chain_from_levels(hier, &ls, m, j, t).map(|c| c.report))
        .collect::<Result<_>>()?;
    let fit = |f: fn(&ProofChainReport) -> f64| {
        let (x, y): (Vec<f64>, Vec<f64>) = rows.iter().skip(1).map(|r| (r.gap, f(r))).unzip();
        log_log_fit(&x, &y)
    };
    Ok(ProofChainDecay {
        l_fit: fit(|r| r.l_norm),
        k_fit: fit(|r| r.k_norm),
        d_fit: fit(|r| r.d_norm),
        rows,
    })
}
