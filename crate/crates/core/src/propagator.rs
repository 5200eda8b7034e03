//! Unitary time stepping for i∂_tψ = L(t)ψ, smoothing operators and
//! regularized generators, flow-convergence studies, growth checks and the
//! Floquet operator.

use crate::error::{Error, Result};
use crate::fit::{fit_growth, polynomial_bound, FitReport, GrowthRegime};
use crate::linalg::{frobenius, lanczos_exp_action, HermitianEigen};
use crate::scalar::{cast, cplx, hermitian_tolerance, modulus, phase, real, to_f64, CMatrix, CVector, Real};
use crate::spectral::{scale_operator_norm, sobolev_norm, OperatorMatrix, OperatorSampler, SpectralModel, StateVector};
use crate::stats::{log_log_fit, LineFit};
use nalgebra::Complex;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::sync::{Arc, OnceLock};

/// Coefficient magnitude beyond which a run is declared blown up.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// ψ ← exp(−i h L(t + h/2)) ψ.
    #[default]
    ExponentialMidpoint,
    /// (1 + i h L/2) ψ' = (1 − i h L/2) ψ with L at the midpoint.
    CrankNicolson,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PropagatorConfig {
    pub dt: f64,
    #[serde(default)]
    pub integrator: Integrator,
    /// [s, t]; t < s propagates backwards.
    pub t_span: [f64; 2],
    /// Steps between recorded samples.
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl PropagatorConfig {
    pub fn new(dt: f64, s: f64, t: f64) -> Self {
        Self {
            dt,
            integrator: Integrator::default(),
            t_span: [s, t],
            record_every: 1,
        }
    }

    pub fn with_integrator(mut self, integrator: Integrator) -> Self {
        self.integrator = integrator;
        self
    }

    pub fn with_record_every(mut self, every: usize) -> Self {
        self.record_every = every;
        self
    }

    pub fn with_span(mut self, s: f64, t: f64) -> Self {
        self.t_span = [s, t];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let [s, t] = self.t_span;
        if !(s.is_finite() && t.is_finite()) || s == t {
            return Err(Error::Config(format!("degenerate time span [{s}, {t}]")));
        }
        if self.record_every == 0 {
            return Err(Error::Config("record_every must be positive".into()));
        }
        Ok(())
    }

    /// Number of steps and the signed step size.
    pub fn steps(&self) -> (usize, f64) {
        let [s, t] = self.t_span;
        let n = ((t - s).abs() / self.dt).round().max(1.0) as usize;
        (n, (t - s) / n as f64)
    }
}

/// Recorded samples of ψ(t) = U(t,s)ψ_s.
#[derive(Clone, Debug, Serialize)]
pub struct Trajectory<T: Real> {
    /// Sample instants, strictly monotone in the direction of propagation.
    pub times: Vec<T>,
    #[serde(skip)]
    pub states: Vec<StateVector<T>>,
    pub ks: Vec<T>,
    /// norms[i][n] = ‖ψ(times[n])‖_{ks[i]}.
    pub norms: Vec<Vec<T>>,
    /// |‖ψ(t)‖_0 − ‖ψ_s‖_0| at each sample.
    pub drift: Vec<T>,
    /// max of `drift`.
    pub conservation_drift: T,
}

impl<T: Real> Trajectory<T> {
    pub fn final_state(&self) -> &StateVector<T> {
        self.states.last().expect("trajectories hold at least one sample")
    }

    pub fn start(&self) -> T {
        self.times[0]
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// (t, ‖ψ(t)‖_k) pairs for the i-th recorded index.
    pub fn norm_series(&self, i: usize) -> Vec<(f64, f64)> {
        self.times
            .iter()
            .zip(&self.norms[i])
            .map(|(&t, &n)| (to_f64(t), to_f64(n)))
            .collect()
    }

    /// Position of k in `ks`.
    pub fn k_index(&self, k: T) -> Option<usize> {
        self.ks.iter().position(|&x| x == k)
    }

    /// Conservation drift divided by the elapsed time.
    pub fn drift_per_unit_time(&self) -> f64 {
        let span = (to_f64(*self.times.last().unwrap()) - to_f64(self.times[0])).abs();
        to_f64(self.conservation_drift) / span.max(f64::MIN_POSITIVE)
    }

    /// CSV with columns `t,norm_k<k>…,conservation_drift`.
    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t".to_string()];
        header.extend(self.ks.iter().map(|k| format!("norm_k{}", to_f64(*k))));
        header.push("conservation_drift".into());
        out.write_record(&header).map_err(csv_err)?;
        for n in 0..self.times.len() {
            let mut row = vec![format!("{}", to_f64(self.times[n]))];
            row.extend(self.norms.iter().map(|s| format!("{}", to_f64(s[n]))));
            row.push(format!("{}", to_f64(self.drift[n])));
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv_to(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_to(std::fs::File::create(path)?)
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Single-step maps of a generator, acting on blocks of column vectors.
pub struct Stepper<'a, T: Real> {
    l: &'a dyn OperatorSampler<T>,
    integrator: Integrator,
}

impl<'a, T: Real> Stepper<'a, T> {
    pub fn new(l: &'a dyn OperatorSampler<T>, integrator: Integrator) -> Self {
        Self { l, integrator }
    }

    fn check(&self, op: &OperatorMatrix<T>, t: T) -> Result<()> {
        let defect = op.hermitian_defect();
        if defect > hermitian_tolerance::<T>() {
            return Err(Error::NotHermitian {
                context: format!("generator at t = {}", to_f64(t)),
                defect: to_f64(defect),
            });
        }
        Ok(())
    }

    /// Hermiticity check at time t: exact for dense generators, a two-vector
    /// probe ⟨u, Lv⟩ = ⟨Lu, v⟩ for matrix-free ones.
    pub fn check_hermitian(&self, t: T) -> Result<()> {
        if self.l.frozen_eigen().is_some() {
            return Ok(());
        }
        if !self.l.prefers_krylov() {
            return self.check(&self.l.eval(t), t);
        }
        let n = self.l.dim();
        let u = CVector::<T>::from_fn(n, |i, _| cplx(cast(((i * 7 + 3) % 11) as f64 - 5.0), cast(((i * 5 + 1) % 7) as f64 - 3.0)));
        let v = CVector::<T>::from_fn(n, |i, _| cplx(cast(((i * 3 + 2) % 13) as f64 - 6.0), cast(((i * 11 + 4) % 5) as f64 - 2.0)));
        let (lu, lv) = (self.l.apply(t, &u), self.l.apply(t, &v));
        let a = u.dotc(&lv);
        let b = lu.dotc(&v);
        let scale = lu.norm() * v.norm() + T::one();
        let defect = modulus(a - b) / scale;
        if defect > hermitian_tolerance::<T>() {
            return Err(Error::NotHermitian {
                context: format!("generator probe at t = {}", to_f64(t)),
                defect: to_f64(defect),
            });
        }
        Ok(())
    }

    /// Advances every column of `block` from t0 to t0 + h.
    pub fn step(&self, t0: T, h: T, block: &CMatrix<T>) -> Result<CMatrix<T>> {
        let half = cast::<T>(0.5);
        let tm = t0 + h * half;
        match self.integrator {
            Integrator::ExponentialMidpoint => {
                if let Some(eig) = self.l.frozen_eigen() {
                    return Ok(exp_block(eig, h, block));
                }
                if self.l.prefers_krylov() {
                    return self.krylov_step(t0, h, block, 0);
                }
                let op = self.l.eval(tm);
                self.check(&op, tm)?;
                Ok(exp_block(&HermitianEigen::new(op.entries()), h, block))
            }
            Integrator::CrankNicolson => {
                let op = self.l.eval(tm);
                self.check(&op, tm)?;
                let n = op.dim();
                let ih2 = cplx(T::zero(), h * half);
                let id = CMatrix::<T>::identity(n, n);
                let a = &id + op.entries() * ih2;
                let b = &id - op.entries() * ih2;
                let rhs = b * block;
                a.lu()
                    .solve(&rhs)
                    .ok_or_else(|| Error::InvalidInput("Crank-Nicolson system is singular".into()))
            }
        }
    }

    fn krylov_step(&self, t0: T, h: T, block: &CMatrix<T>, depth: usize) -> Result<CMatrix<T>> {
        let tm = t0 + h * cast::<T>(0.5);
        let apply = |v: &CVector<T>| self.l.apply(tm, v);
        let tol_rel = cast::<T>(1e-12).max(T::default_epsilon() * cast(64.0));
        let mut out = block.clone();
        for (c, mut col) in block.column_iter().zip(out.column_iter_mut()) {
            let v: CVector<T> = c.into_owned();
            match lanczos_exp_action(&apply, &v, h, tol_rel * v.norm(), 60) {
                Some(step) => col.copy_from(&step.vector),
                None if depth < 12 => {
                    let half = h * cast::<T>(0.5);
                    let vm = CMatrix::from_column_slice(v.len(), 1, v.as_slice());
                    let a = self.krylov_step(t0, half, &vm, depth + 1)?;
                    let b = self.krylov_step(t0 + half, half, &a, depth + 1)?;
                    col.copy_from(&b.column(0));
                }
                None => {
                    return Err(Error::InvalidInput(format!(
                        "Krylov exponential did not converge at t = {}",
                        to_f64(t0)
                    )))
                }
            }
        }
        Ok(out)
    }
}

fn exp_block<T: Real>(eig: &HermitianEigen<T>, h: T, block: &CMatrix<T>) -> CMatrix<T> {
    let mut w = eig.vectors.ad_mul(block);
    for (i, &lam) in eig.values.iter().enumerate() {
        let p = phase(-h * lam);
        for x in w.row_mut(i).iter_mut() {
            *x *= p;
        }
    }
    &eig.vectors * w
}

fn blow_up_check<T: Real>(block: &CMatrix<T>, t: T) -> Result<()> {
    let mut worst = 0.0f64;
    for z in block.iter() {
        let m = to_f64(modulus(*z));
        if !m.is_finite() {
            return Err(Error::StateBlowUp { t: to_f64(t), magnitude: f64::INFINITY });
        }
        worst = worst.max(m);
    }
    if worst > BLOW_UP_THRESHOLD {
        return Err(Error::StateBlowUp { t: to_f64(t), magnitude: worst });
    }
    Ok(())
}

/// Evolves a block of column vectors over `cfg.t_span` without recording.
pub fn propagate_block<T: Real>(l: &dyn OperatorSampler<T>, block: &CMatrix<T>, cfg: &PropagatorConfig) -> Result<CMatrix<T>> {
    cfg.validate()?;
    let stepper = Stepper::new(l, cfg.integrator);
    stepper.check_hermitian(cast(cfg.t_span[0]))?;
    let (n, h) = cfg.steps();
    let mut cur = block.clone();
    for i in 0..n {
        let t0 = cast::<T>(cfg.t_span[0] + i as f64 * h);
        cur = stepper.step(t0, cast(h), &cur)?;
        blow_up_check(&cur, t0 + cast(h))?;
    }
    Ok(cur)
}

/// Matrix U(t,s) of the discrete flow over `cfg.t_span`.
pub fn propagator_matrix<T: Real>(l: &dyn OperatorSampler<T>, cfg: &PropagatorConfig) -> Result<CMatrix<T>> {
    let n = l.dim();
    propagate_block(l, &CMatrix::identity(n, n), cfg)
}

/// Propagates ψ_s over `cfg.t_span`, recording the H^k norms for each k.
pub fn propagate<T: Real>(
    model: &SpectralModel<T>,
    l: &dyn OperatorSampler<T>,
    psi_s: &StateVector<T>,
    cfg: &PropagatorConfig,
    ks: &[T],
) -> Result<Trajectory<T>> {
    cfg.validate()?;
    if psi_s.dim() != l.dim() || l.dim() != model.dim() {
        return Err(Error::InvalidInput(format!(
            "dimension mismatch: state {}, generator {}, model {}",
            psi_s.dim(),
            l.dim(),
            model.dim()
        )));
    }
    let stepper = Stepper::new(l, cfg.integrator);
    let (n, h) = cfg.steps();
    let s = cfg.t_span[0];
    let norm0 = psi_s.norm();
    let mut traj = Trajectory {
        times: Vec::new(),
        states: Vec::new(),
        ks: ks.to_vec(),
        norms: vec![Vec::new(); ks.len()],
        drift: Vec::new(),
        conservation_drift: T::zero(),
    };
    let mut record = |t: T, psi: &StateVector<T>| -> Result<()> {
        stepper.check_hermitian(t)?;
        for (i, &k) in ks.iter().enumerate() {
            traj.norms[i].push(sobolev_norm(model, psi, k)?);
        }
        let d = (psi.norm() - norm0).abs();
        traj.drift.push(d);
        if d > traj.conservation_drift {
            traj.conservation_drift = d;
        }
        traj.times.push(t);
        traj.states.push(psi.clone());
        Ok(())
    };
    record(cast(s), psi_s)?;
    let mut cur = CMatrix::from_column_slice(psi_s.dim(), 1, psi_s.coords.as_slice());
    for i in 0..n {
        let t0 = cast::<T>(s + i as f64 * h);
        cur = stepper.step(t0, cast(h), &cur)?;
        let t1 = cast::<T>(s + (i + 1) as f64 * h);
        blow_up_check(&cur, t1)?;
        if (i + 1) % cfg.record_every == 0 || i + 1 == n {
            record(t1, &StateVector::new(cur.column(0).into_owned()))?;
        }
    }
    Ok(traj)
}

/// Richardson estimate (4/3)‖ψ_dt − ψ_{dt/2}‖ of the global error of the final
/// state for a second-order integrator.
pub fn integrator_error_estimate<T: Real>(
    l: &dyn OperatorSampler<T>,
    psi_s: &StateVector<T>,
    cfg: &PropagatorConfig,
) -> Result<T> {
    let block = CMatrix::from_column_slice(psi_s.dim(), 1, psi_s.coords.as_slice());
    let coarse = propagate_block(l, &block, cfg)?;
    let fine_cfg = PropagatorConfig { dt: cfg.dt * 0.5, ..cfg.clone() };
    let fine = propagate_block(l, &block, &fine_cfg)?;
    Ok(frobenius(&(coarse - fine)) * cast(4.0 / 3.0))
}

/// Checks on the smoothing operator R_N, measured on the observed
/// block for the Sobolev indices in `ks`.
#[derive(Clone, Debug, Serialize)]
pub struct SmoothingReport {
    pub n: f64,
    pub m_bar: u32,
    pub ks: Vec<f64>,
    /// max_k ‖R_N‖_{L(H^k, H^{k+2m̄})}; bounded by N.
    pub gain_norm: f64,
    /// max_k ‖R_N‖_{L(H^k)}; bounded by 1.
    pub self_norm: f64,
    /// N·max_k ‖R_N − 1‖_{L(H^{k+2m̄}, H^k)}.
    pub scaled_defect: f64,
    /// N^{1/2}·max_k ‖R_N − 1‖_{L(H^{k+m̄}, H^k)}.
    pub scaled_defect_half: f64,
    pub gain_within_n: bool,
    pub self_within_one: bool,
}

/// R_N = (1 + H^{m̄}/N)^{−1} with a report on its mapping properties.
pub fn smoothing_operator<T: Real>(model: &SpectralModel<T>, n: T, m_bar: u32) -> Result<(OperatorMatrix<T>, SmoothingReport)> {
    if !(n > T::zero()) || m_bar == 0 {
        return Err(Error::InvalidInput("smoothing needs N > 0 and m_bar >= 1".into()));
    }
    let diag: Vec<T> = model
        .eigenvalues()
        .iter()
        .map(|&l| T::one() / (T::one() + l.powi(m_bar as i32) / n))
        .collect();
    let ks = [0.0, 1.0, 2.0];
    let obs = model.observe_dim();
    let lam: Vec<f64> = model.eigenvalues()[..obs].iter().map(|&x| to_f64(x)).collect();
    let r: Vec<f64> = diag[..obs].iter().map(|&x| to_f64(x)).collect();
    let nf = to_f64(n);
    let mb = m_bar as f64;
    // diagonal operators: ‖D‖_{L(H^a, H^b)} = max_j λ_j^{(b−a)/2}|d_j|
    let norm = |d: &dyn Fn(usize) -> f64, a: f64, b: f64| {
        (0..obs).map(|j| lam[j].powf(0.5 * (b - a)) * d(j).abs()).fold(0.0, f64::max)
    };
    let (mut gain, mut own, mut def1, mut def_half) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for &k in &ks {
        gain = gain.max(norm(&|j| r[j], k, k + 2.0 * mb));
        own = own.max(norm(&|j| r[j], k, k));
        def1 = def1.max(norm(&|j| r[j] - 1.0, k + 2.0 * mb, k));
        def_half = def_half.max(norm(&|j| r[j] - 1.0, k + mb, k));
    }
    let report = SmoothingReport {
        n: nf,
        m_bar,
        ks: ks.to_vec(),
        gain_norm: gain,
        self_norm: own,
        scaled_defect: def1 * nf,
        scaled_defect_half: def_half * nf.sqrt(),
        gain_within_n: gain <= nf * (1.0 + 1e-12),
        self_within_one: own <= 1.0 + 1e-12,
    };
    Ok((OperatorMatrix::diagonal(&diag), report))
}

/// t ↦ R L(t) R for a diagonal smoothing operator R.
pub struct RegularizedSampler<T: Real> {
    inner: Arc<dyn OperatorSampler<T>>,
    r: Vec<T>,
    eigen: OnceLock<HermitianEigen<T>>,
}

impl<T: Real> RegularizedSampler<T> {
    fn sandwich(&self, m: &OperatorMatrix<T>) -> OperatorMatrix<T> {
        let r = &self.r;
        let e = CMatrix::from_fn(r.len(), r.len(), |i, j| m.entries()[(i, j)] * real(r[i] * r[j]));
        OperatorMatrix::new(e)
    }
}

/// L_N(t) = R_N L(t) R_N. `r` must be diagonal.
pub fn regularized_generator<T: Real>(l: Arc<dyn OperatorSampler<T>>, r: &OperatorMatrix<T>) -> Result<RegularizedSampler<T>> {
    let e = r.entries();
    if e.nrows() != l.dim() {
        return Err(Error::InvalidInput("smoothing operator has the wrong dimension".into()));
    }
    let off = e
        .iter()
        .enumerate()
        .filter(|(idx, _)| idx % (e.nrows() + 1) != 0)
        .fold(T::zero(), |a, (_, z)| a + z.norm_sqr());
    if off > T::zero() {
        return Err(Error::InvalidInput("smoothing operator must be diagonal in the H basis".into()));
    }
    Ok(RegularizedSampler {
        inner: l,
        r: (0..e.nrows()).map(|i| e[(i, i)].re).collect(),
        eigen: OnceLock::new(),
    })
}

impl<T: Real> OperatorSampler<T> for RegularizedSampler<T> {
    fn dim(&self) -> usize {
        self.r.len()
    }

    fn eval(&self, t: T) -> OperatorMatrix<T> {
        self.sandwich(&self.inner.eval(t))
    }

    fn derivative(&self, t: T, order: usize) -> Result<OperatorMatrix<T>> {
        Ok(self.sandwich(&self.inner.derivative(t, order)?))
    }

    fn max_order(&self) -> usize {
        self.inner.max_order()
    }

    fn apply(&self, t: T, v: &CVector<T>) -> CVector<T> {
        let rv = CVector::from_fn(v.len(), |i, _| v[i] * real(self.r[i]));
        let w = self.inner.apply(t, &rv);
        CVector::from_fn(v.len(), |i, _| w[i] * real(self.r[i]))
    }

    fn is_time_independent(&self) -> bool {
        self.inner.is_time_independent()
    }

    fn frozen_eigen(&self) -> Option<&HermitianEigen<T>> {
        if !self.is_time_independent() || self.prefers_krylov() {
            return None;
        }
        Some(self.eigen.get_or_init(|| HermitianEigen::new(self.eval(T::zero()).entries())))
    }

    fn prefers_krylov(&self) -> bool {
        self.inner.prefers_krylov()
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowConvergenceRow {
    pub n: f64,
    /// ‖U_n(t,s)ψ − U(t,s)ψ‖_k at the end of the span.
    pub defect: f64,
    /// max over sampled t of ‖[L_n(t), H]H^{−1}‖.
    pub commutator_bound: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowConvergenceReport {
    pub k: f64,
    pub rows: Vec<FlowConvergenceRow>,
    /// log defect against log n over rows with nonzero defect.
    pub rate: Option<LineFit>,
    pub monotone_decreasing: bool,
    /// Spread of the commutator bounds across the family.
    pub commutator_bound_max: f64,
}

fn commutator_bound<T: Real>(model: &SpectralModel<T>, l: &dyn OperatorSampler<T>, times: &[T]) -> f64 {
    let lam = model.eigenvalues();
    times
        .iter()
        .map(|&t| {
            let a = l.eval(t);
            let n = a.dim();
            let c = CMatrix::from_fn(n, n, |i, j| a.entries()[(i, j)] * real(lam[j] - lam[i]));
            to_f64(scale_operator_norm(model, &OperatorMatrix::new(c), T::zero(), T::one()))
        })
        .fold(0.0, f64::max)
}

/// Propagates under each member of the family and under L and tabulates the
/// H^k distance of the final states.
pub fn flow_convergence_study<T: Real>(
    model: &SpectralModel<T>,
    l: &dyn OperatorSampler<T>,
    family: &[(f64, Arc<dyn OperatorSampler<T>>)],
    psi: &StateVector<T>,
    cfg: &PropagatorConfig,
    k: T,
) -> Result<FlowConvergenceReport> {
    let reference = propagate(model, l, psi, cfg, &[])?;
    let target = reference.final_state().clone();
    let [s, t] = cfg.t_span;
    let probe: Vec<T> = (0..3).map(|i| cast(s + (t - s) * i as f64 / 2.0)).collect();
    let mut rows = Vec::new();
    for (n, ln) in family {
        let traj = propagate(model, ln.as_ref(), psi, cfg, &[])?;
        let diff = StateVector::new(&traj.final_state().coords - &target.coords);
        rows.push(FlowConvergenceRow {
            n: *n,
            defect: to_f64(sobolev_norm(model, &diff, k)?),
            commutator_bound: commutator_bound(model, ln.as_ref(), &probe),
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows.iter().filter(|r| r.defect > 0.0).map(|r| (r.n, r.defect)).unzip();
    let rate = log_log_fit(&xs, &ys);
    let monotone_decreasing = rows.windows(2).all(|w| w[1].defect <= w[0].defect * (1.0 + 1e-9));
    let commutator_bound_max = rows.iter().map(|r| r.commutator_bound).fold(0.0, f64::max);
    Ok(FlowConvergenceReport {
        k: to_f64(k),
        rows,
        rate,
        monotone_decreasing,
        commutator_bound_max,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthCheck {
    pub k: f64,
    pub tau: f64,
    /// log‖ψ‖_k against log⟨t−s⟩ with the bound k/(2(1−τ)) attached.
    pub polynomial: Option<FitReport>,
    /// log‖ψ‖_k against t − s.
    pub exponential: Option<FitReport>,
}

/// Fits the recorded H^k norms in the polynomial and exponential regimes.
pub fn growth_bound_check<T: Real>(traj: &Trajectory<T>, k: T, tau: f64) -> Result<GrowthCheck> {
    let idx = traj
        .k_index(k)
        .ok_or_else(|| Error::InvalidInput(format!("index k = {} was not recorded", to_f64(k))))?;
    let s = to_f64(traj.start());
    let series = traj.norm_series(idx);
    let bracket: Vec<(f64, f64)> = series.iter().map(|&(t, n)| ((1.0 + (t - s).powi(2)).sqrt(), n)).collect();
    let elapsed: Vec<(f64, f64)> = series.iter().map(|&(t, n)| ((t - s).abs(), n)).collect();
    let polynomial = fit_growth(&bracket, GrowthRegime::Polynomial, 1.0)
        .ok()
        .map(|f| f.with_bound(polynomial_bound(to_f64(k), tau)));
    let first_positive = elapsed.iter().map(|p| p.0).filter(|&x| x > 0.0).fold(f64::INFINITY, f64::min);
    let exponential = fit_growth(&elapsed, GrowthRegime::Exponential, first_positive).ok();
    if polynomial.is_none() && exponential.is_none() {
        return Err(Error::InsufficientData(
            "trajectory too short: growth fits need ten samples spanning a decade".into(),
        ));
    }
    Ok(GrowthCheck {
        k: to_f64(k),
        tau,
        polynomial,
        exponential,
    })
}

/// Monodromy matrix and its spectrum.
#[derive(Clone, Debug)]
pub struct FloquetResult<T: Real> {
    pub monodromy: OperatorMatrix<T>,
    /// arg of the eigenvalues, ascending in (−π, π].
    pub eigenphases: Vec<T>,
    pub moduli: Vec<T>,
    /// ‖F*F − 1‖_F.
    pub unitarity_defect: T,
}

impl<T: Real> FloquetResult<T> {
    /// CSV with columns `index,phase,modulus`.
    pub fn write_csv_to<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["index", "phase", "modulus"]).map_err(csv_err)?;
        for (i, (p, m)) in self.eigenphases.iter().zip(&self.moduli).enumerate() {
            out.write_record([i.to_string(), format!("{}", to_f64(*p)), format!("{}", to_f64(*m))])
                .map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// F = U(s + T, s) with s = cfg.t_span[0]; the end of `cfg.t_span` is ignored.
pub fn floquet_operator<T: Real>(l: &dyn OperatorSampler<T>, period: T, cfg: &PropagatorConfig) -> Result<FloquetResult<T>> {
    if !(period > T::zero()) {
        return Err(Error::InvalidInput("period must be positive".into()));
    }
    let s = cfg.t_span[0];
    let tp = to_f64(period);
    for i in 0..8 {
        let t = cast::<T>(s + tp * i as f64 / 8.0);
        let a = l.eval(t);
        let b = l.eval(t + period);
        let defect = to_f64(frobenius(&(b.entries() - a.entries()))) / to_f64(a.frobenius()).max(1.0);
        if defect > 1e-10 {
            return Err(Error::PeriodicityViolated { t: to_f64(t), defect });
        }
    }
    let cfg = cfg.clone().with_span(s, s + tp);
    let u = propagator_matrix(l, &cfg)?;
    let n = u.nrows();
    let unitarity_defect = frobenius(&(u.ad_mul(&u) - CMatrix::<T>::identity(n, n)));
    let eig = nalgebra::Schur::new(u.clone()).unpack().1;
    let mut spec: Vec<(T, T)> = (0..n)
        .map(|i| {
            let z: Complex<T> = eig[(i, i)];
            (z.im.atan2(z.re), modulus(z))
        })
        .collect();
    spec.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    Ok(FloquetResult {
        monodromy: OperatorMatrix::new(u),
        eigenphases: spec.iter().map(|p| p.0).collect(),
        moduli: spec.iter().map(|p| p.1).collect(),
        unitarity_defect,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ConstantSampler, Envelope, FnSampler, ModulatedSampler, TermMatrix};
    use approx::assert_relative_eq;

    fn torus(n: usize) -> SpectralModel<f64> {
        let mut v = vec![1.0];
        for k in 1..=n {
            v.push((k * k + 1) as f64);
            v.push((k * k + 1) as f64);
        }
        SpectralModel::new(v, "torus").unwrap()
    }

    fn drive(m: &SpectralModel<f64>) -> ModulatedSampler<f64> {
        let n = m.dim();
        let band = CMatrix::<f64>::from_fn(n, n, |i, j| {
            if (i as i64 - j as i64).abs() == 2 {
                Complex::new(0.5, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        ModulatedSampler::new(n)
            .term(Envelope::constant(1.0), TermMatrix::Diagonal(m.eigenvalues().to_vec()))
            .term(Envelope::cosine(1.0, 1.3, 0.2), TermMatrix::Dense(band))
    }

    fn gaussian(n: usize) -> StateVector<f64> {
        StateVector::new(CVector::from_fn(n, |i, _| Complex::new((-(i as f64) * 0.3).exp(), 0.1 * (i as f64 * 0.7).sin())))
            .normalized()
    }

    #[test]
    fn stationary_state_phase() {
        let m = torus(5);
        let h = ConstantSampler::new(m.h_operator());
        let cfg = PropagatorConfig::new(0.01, 0.0, 1.0);
        let tr = propagate(&m, &h, &StateVector::basis(m.dim(), 3), &cfg, &[1.0]).unwrap();
        let z = tr.final_state().coords[3];
        assert_relative_eq!(z.re, (-m.eigenvalues()[3]).cos(), epsilon = 1e-12);
        assert_relative_eq!(z.im, (-m.eigenvalues()[3]).sin(), epsilon = 1e-12);
        assert!(tr.norms[0].iter().all(|&x| (x - m.eigenvalues()[3].sqrt()).abs() < 1e-12));
    }

    #[test]
    fn group_property_and_reversal() {
        let m = torus(6);
        let l = drive(&m);
        let psi = gaussian(m.dim());
        let cfg = |a, b| PropagatorConfig::new(0.01, a, b);
        let direct = propagate(&m, &l, &psi, &cfg(0.0, 1.0), &[]).unwrap();
        let mid = propagate(&m, &l, &psi, &cfg(0.0, 0.4), &[]).unwrap();
        let two = propagate(&m, &l, mid.final_state(), &cfg(0.4, 1.0), &[]).unwrap();
        let err = integrator_error_estimate(&l, &psi, &cfg(0.0, 1.0)).unwrap();
        assert!((&direct.final_state().coords - &two.final_state().coords).norm() <= 2.0 * err);
        let back = propagate(&m, &l, direct.final_state(), &cfg(1.0, 0.0), &[]).unwrap();
        assert!((&back.final_state().coords - &psi.coords).norm() <= 2.0 * err);
        assert!(back.times.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn unitarity_and_order() {
        let m = torus(6);
        let l = drive(&m);
        let psi = gaussian(m.dim());
        let tr = propagate(&m, &l, &psi, &PropagatorConfig::new(1e-3, 0.0, 1.0).with_record_every(100), &[0.0]).unwrap();
        assert!(tr.drift_per_unit_time() <= 1e-9);
        let fin = |dt: f64| {
            propagate(&m, &l, &psi, &PropagatorConfig::new(dt, 0.0, 1.0), &[])
                .unwrap()
                .final_state()
                .coords
                .clone()
        };
        let reference = fin(0.1 / 80.0);
        let e1 = (fin(0.1) - &reference).norm();
        let e2 = (fin(0.05) - &reference).norm();
        let order = (e1 / e2).log2();
        assert!((1.7..=2.3).contains(&order), "order {order}");
    }

    #[test]
    fn crank_nicolson_agrees() {
        let m = torus(4);
        let l = drive(&m);
        let psi = gaussian(m.dim());
        let cfg = PropagatorConfig::new(2e-3, 0.0, 0.5);
        let a = propagate(&m, &l, &psi, &cfg, &[]).unwrap();
        let b = propagate(&m, &l, &psi, &cfg.clone().with_integrator(Integrator::CrankNicolson), &[]).unwrap();
        assert!((&a.final_state().coords - &b.final_state().coords).norm() < 1e-3);
        assert!(b.conservation_drift < 1e-12);
    }

    #[test]
    fn krylov_matches_dense() {
        let m = torus(6);
        let dense = drive(&m);
        let kry = drive(&m).with_krylov(true);
        let psi = gaussian(m.dim());
        let cfg = PropagatorConfig::new(0.02, 0.0, 1.0);
        let a = propagate(&m, &dense, &psi, &cfg, &[]).unwrap();
        let b = propagate(&m, &kry, &psi, &cfg, &[]).unwrap();
        assert!((&a.final_state().coords - &b.final_state().coords).norm() < 1e-9);
    }

    #[test]
    fn non_hermitian_and_blow_up_are_errors() {
        let m = torus(2);
        let n = m.dim();
        let bad = FnSampler::new(
            n,
            move |_t: f64| {
                let mut e = CMatrix::<f64>::identity(n, n);
                e[(0, 1)] = Complex::new(1.0, 0.0);
                e
            },
            0,
            0.0,
        );
        let cfg = PropagatorConfig::new(0.1, 0.0, 1.0);
        assert!(matches!(propagate(&m, &bad, &gaussian(n), &cfg, &[]), Err(Error::NotHermitian { .. })));
        let huge = StateVector::new(CVector::from_element(n, Complex::new(1e13, 0.0)));
        let h = ConstantSampler::new(m.h_operator());
        assert!(matches!(propagate(&m, &h, &huge, &cfg, &[]), Err(Error::StateBlowUp { .. })));
        assert!(matches!(propagate(&m, &h, &gaussian(n), &PropagatorConfig::new(0.0, 0.0, 1.0), &[]), Err(Error::Config(_))));
    }

    #[test]
    fn csv_layout() {
        let m = torus(2);
        let h = ConstantSampler::new(m.h_operator());
        let tr = propagate(&m, &h, &gaussian(m.dim()), &PropagatorConfig::new(0.25, 0.0, 0.5), &[1.0, 2.0]).unwrap();
        let csv = tr.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,norm_k1,norm_k2,conservation_drift"));
        assert_eq!(lines.count(), 3);
    }

    #[test]
    fn smoothing_example_and_limits() {
        let m = SpectralModel::new(vec![1.0, 2.0], "h").unwrap();
        let (r, rep) = smoothing_operator(&m, 2.0, 1).unwrap();
        assert_relative_eq!(r.entries()[(0, 0)].re, 2.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(r.entries()[(1, 1)].re, 0.5, epsilon = 1e-15);
        assert!(rep.gain_within_n && rep.self_within_one);
        let (r, _) = smoothing_operator(&m, 1e12f64, 1).unwrap();
        assert!((r.entries()[(1, 1)].re - 1.0).abs() < 1e-11);
    }

    #[test]
    fn smoothing_defect_rate() {
        let m = torus(30);
        let (ns, ds): (Vec<f64>, Vec<f64>) = (4..10)
            .map(|i| {
                let n = 2f64.powi(i);
                let (_, rep) = smoothing_operator(&m, n, 1).unwrap();
                (n, rep.scaled_defect / n)
            })
            .unzip();
        let fit = log_log_fit(&ns, &ds).unwrap();
        assert!((fit.slope + 1.0).abs() < 0.05);
    }

    #[test]
    fn regularized_generator_diagonal_and_defect() {
        let m = torus(8);
        let (r, _) = smoothing_operator(&m, 4.0, 1).unwrap();
        let l: Arc<dyn OperatorSampler<f64>> = Arc::new(drive(&m));
        let ln = regularized_generator(l.clone(), &r).unwrap();
        let a = l.eval(0.3);
        let b = ln.eval(0.3);
        for i in 0..m.dim() {
            let ri = r.entries()[(i, i)].re;
            assert_relative_eq!(b.entries()[(i, i)].re, a.entries()[(i, i)].re * ri * ri, epsilon = 1e-12);
        }
        assert!(b.is_hermitian());
        // ‖L_N − L‖_{L(H^{k+2m̄(1+η)}, H^k)}·N^η bounded in N, k = 0, η = 1
        let scaled: Vec<f64> = (2..9)
            .map(|i| {
                let n = 2f64.powi(i);
                let (r, _) = smoothing_operator(&m, n, 1).unwrap();
                let ln = regularized_generator(l.clone(), &r).unwrap();
                let d = OperatorMatrix::new(ln.eval(0.3).entries() - l.eval(0.3).entries());
                scale_operator_norm(&m, &d, 0.0, 2.0) * n
            })
            .collect();
        let hi = scaled.iter().cloned().fold(0.0, f64::max);
        let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(hi / lo < 3.0, "{scaled:?}");
        let mut bad = OperatorMatrix::identity(m.dim()).into_entries();
        bad[(0, 1)] = Complex::new(0.1, 0.0);
        assert!(regularized_generator(l, &OperatorMatrix::new(bad)).is_err());
    }

    #[test]
    fn flow_convergence_trivial_and_mode_scaling() {
        let m = torus(8);
        let l: Arc<dyn OperatorSampler<f64>> = Arc::new(drive(&m));
        let psi = gaussian(m.dim());
        let cfg = PropagatorConfig::new(0.01, 0.0, 1.0);
        let same: Vec<(f64, Arc<dyn OperatorSampler<f64>>)> = vec![(1.0, l.clone()), (2.0, l.clone())];
        let rep = flow_convergence_study(&m, l.as_ref(), &same, &psi, &cfg, 1.0).unwrap();
        assert!(rep.rows.iter().all(|r| r.defect == 0.0));
        let n = m.dim();
        let mode = CMatrix::<f64>::from_fn(n, n, |i, j| {
            if (i as i64 - j as i64).abs() == 4 {
                Complex::new(0.5, 0.0)
            } else {
                Complex::new(0.0, 0.0)
            }
        });
        let fam: Vec<(f64, Arc<dyn OperatorSampler<f64>>)> = [4.0, 8.0, 16.0, 32.0, 64.0]
            .iter()
            .map(|&k| {
                let s: Arc<dyn OperatorSampler<f64>> = Arc::new(drive(&m).term(
                    Envelope::cosine(1.0 / k, 0.7, 0.0),
                    TermMatrix::Dense(mode.clone()),
                ));
                (k, s)
            })
            .collect();
        let rep = flow_convergence_study(&m, l.as_ref(), &fam, &psi, &cfg, 1.0).unwrap();
        assert!(rep.monotone_decreasing);
        assert!((rep.rate.unwrap().slope + 1.0).abs() < 0.1);
    }

    #[test]
    fn growth_check_flat() {
        let m = torus(4);
        let h = ConstantSampler::new(m.h_operator());
        let tr = propagate(&m, &h, &gaussian(m.dim()), &PropagatorConfig::new(0.5, 0.0, 40.0), &[2.0]).unwrap();
        let g = growth_bound_check(&tr, 2.0, 0.0).unwrap();
        assert!(g.polynomial.unwrap().exponent.abs() < 1e-8);
        let short = propagate(&m, &h, &gaussian(m.dim()), &PropagatorConfig::new(0.5, 0.0, 2.0), &[2.0]).unwrap();
        assert!(growth_bound_check(&short, 2.0, 0.0).is_err());
    }

    #[test]
    fn floquet_constant_and_shift() {
        let m = torus(3);
        let h = ConstantSampler::new(m.h_operator());
        let period = 0.7;
        let f = floquet_operator(&h, period, &PropagatorConfig::new(0.01, 0.0, 0.0)).unwrap();
        for (j, &lam) in m.eigenvalues().iter().enumerate() {
            let z = f.monodromy.entries()[(j, j)];
            assert_relative_eq!(z.re, (lam * period).cos(), epsilon = 1e-12);
            assert_relative_eq!(z.im, -(lam * period).sin(), epsilon = 1e-12);
        }
        let l = drive(&m);
        let p = 2.0 * std::f64::consts::PI / 1.3;
        let a = floquet_operator(&l, p, &PropagatorConfig::new(p / 400.0, 0.0, 0.0)).unwrap();
        let b = floquet_operator(&l, p, &PropagatorConfig::new(p / 400.0, 0.9, 0.0)).unwrap();
        assert!(a.unitarity_defect < 1e-10);
        let mut ua: Vec<f64> = a.eigenphases.clone();
        let mut ub: Vec<f64> = b.eigenphases.clone();
        ua.sort_by(f64::total_cmp);
        ub.sort_by(f64::total_cmp);
        // the discrete flows differ at O(dt²), compare as sets at that level
        for (x, y) in ua.iter().zip(&ub) {
            assert!((x - y).abs() < 1e-3, "{x} vs {y}");
        }
        assert!(matches!(floquet_operator(&l, 1.0, &PropagatorConfig::new(0.01, 0.0, 0.0)), Err(Error::PeriodicityViolated { .. })));
    }

    #[test]
    fn floquet_rabi_against_fine_reference() {
        let sx = CMatrix::<f64>::from_row_slice(2, 2, &[Complex::new(0.0, 0.0), Complex::new(1.0, 0.0), Complex::new(1.0, 0.0), Complex::new(0.0, 0.0)]);
        let l = ModulatedSampler::new(2)
            .term(Envelope::constant(1.0), TermMatrix::Diagonal(vec![1.0, 2.0]))
            .term(Envelope::cosine(0.3, 2.0, 0.0), TermMatrix::Dense(sx));
        let p = std::f64::consts::PI;
        let coarse = floquet_operator(&l, p, &PropagatorConfig::new(p / 200.0, 0.0, 0.0)).unwrap();
        let fine = floquet_operator(&l, p, &PropagatorConfig::new(p / 20000.0, 0.0, 0.0)).unwrap();
        for (a, b) in coarse.eigenphases.iter().zip(&fine.eigenphases) {
            assert!((a - b).abs() < 1e-3);
        }
        let mut buf = Vec::new();
        fine.write_csv_to(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("index,phase,modulus\n0,"));
    }
}
