//! Constant-selection formulas: δ, the dyadic parameter J, the depth M and
//! the mode cutoff N(t).

use crate::error::{Error, Result};
use crate::scalar::{cast, japanese, to_f64, Real};
use serde::Serialize;

/// δ = 1 − ((μ+1)/μ)·ν, defined for μ > 0 and 0 ≤ ν < μ/(μ+1).
pub fn delta_exponent<T: Real>(mu: T, nu: T) -> Result<T> {
    if !(mu > T::zero()) {
        return Err(Error::InvalidInput(format!("mu must be positive, got {}", to_f64(mu))));
    }
    if nu < T::zero() {
        return Err(Error::InvalidInput(format!("nu must be nonnegative, got {}", to_f64(nu))));
    }
    let bound = mu / (mu + T::one());
    if nu >= bound {
        return Err(Error::PerturbationOrderTooHigh {
            nu: to_f64(nu),
            bound: to_f64(bound),
        });
    }
    Ok(T::one() - (mu + T::one()) / mu * nu)
}

/// Smallest J ≥ 1 with 2^{Jμδ} ≥ 16·C_H·v_norm.
pub fn smallest_j_condz<T: Real>(mu_delta: T, c_h: T, v_norm: T) -> u32 {
    let target = cast::<T>(16.0) * c_h * v_norm;
    let two = cast::<T>(2.0);
    let mut j = 1u32;
    while two.powf(cast::<T>(j as f64) * mu_delta) < target {
        j += 1;
    }
    j
}

/// Smallest M ≥ 0 with (1/ε)·(μ+1)n/(μδ) ≤ M + 1.
pub fn choose_constants_smooth<T: Real>(epsilon: T, mu: T, delta: T, n: u32) -> Result<u32> {
    if !(epsilon > T::zero()) {
        return Err(Error::InvalidInput("epsilon must be positive".into()));
    }
    if !(mu > T::zero() && delta > T::zero()) {
        return Err(Error::InvalidInput("mu and delta must be positive".into()));
    }
    let x = to_f64((mu + T::one()) * cast::<T>(n as f64) / (mu * delta) / epsilon);
    // Absorb rounding in the quotient before taking the ceiling.
    let m_plus_one = (x * (1.0 - 64.0 * f64::EPSILON)).ceil().max(1.0);
    Ok(m_plus_one as u32 - 1)
}

/// td = 2^{μδ}/(2^{μδ} − 1).
pub fn td_constant<T: Real>(mu_delta: T) -> T {
    let p = cast::<T>(2.0).powf(mu_delta);
    p / (p - T::one())
}

/// The constant A of the convolution inequality; any A ≥ 2π²/3 works.
pub fn sum_inequality_constant<T: Real>() -> T {
    cast::<T>(2.0) * T::pi() * T::pi() / cast(3.0)
}

/// (1+ℓ)² Σ_{n_1+…+n_k=ℓ} Π (1+n_i)^{-2}, computed by repeated convolution.
pub fn sum_inequality_lhs(ell: usize, k: usize) -> f64 {
    assert!(k >= 1);
    let base: Vec<f64> = (0..=ell).map(|n| 1.0 / ((1 + n) as f64).powi(2)).collect();
    let mut acc = base.clone();
    for _ in 1..k {
        let mut next = vec![0.0; ell + 1];
        for (i, &a) in acc.iter().enumerate() {
            for (j, &b) in base.iter().enumerate().take(ell + 1 - i) {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    ((1 + ell) as f64).powi(2) * acc[ell]
}

/// Normalization of the analytic hypothesis: a = A·c0, c = 4·c1.
pub fn analytic_normalization<T: Real>(c0: T, c1: T) -> (T, T) {
    (sum_inequality_constant::<T>() * c0, cast::<T>(4.0) * c1)
}

/// Output of [`choose_constants_analytic`].
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct AnalyticConstants {
    pub j: u32,
    pub m: u32,
    /// Left side 2^{12}[Ĉ_H(a+2td)c]M of the admissibility condition.
    pub cond_lhs: f64,
    /// Right side 2^{Jμδ}.
    pub cond_rhs: f64,
}

/// M from M+1 = ⌊¼ log⟨T⟩⌋ and J as the smallest integer not below
/// (1/μδ)log₂(M+1) + (1/μδ)log₂(2^{12}Ĉ_H(a+2td)c), J ≥ 1.
pub fn choose_constants_analytic<T: Real>(
    horizon: T,
    mu: T,
    delta: T,
    a: T,
    c: T,
    td: T,
    c_hat: T,
) -> Result<AnalyticConstants> {
    let log_bracket = to_f64(japanese(horizon).ln());
    let m_plus_one = (log_bracket / 4.0 * (1.0 + 64.0 * f64::EPSILON)).floor();
    if m_plus_one < 1.0 {
        return Err(Error::TimeHorizonTooSmall { log_bracket });
    }
    let m = m_plus_one as u32 - 1;
    let md = to_f64(mu * delta);
    let k = 4096.0 * to_f64(c_hat * (a + cast::<T>(2.0) * td) * c);
    let raw = (m_plus_one.log2() + k.log2()) / md;
    let mut j = (raw * (1.0 - 64.0 * f64::EPSILON)).ceil().max(1.0) as u32;
    let lhs = k * m as f64;
    while 2f64.powf(j as f64 * md) < lhs {
        j += 1;
    }
    Ok(AnalyticConstants {
        j,
        m,
        cond_lhs: lhs,
        cond_rhs: 2f64.powf(j as f64 * md),
    })
}

/// N(t) = log⟨t − s⟩ / ((M+1)μδ).
pub fn n_cutoff<T: Real>(t: T, s: T, m: u32, mu: T, delta: T) -> T {
    japanese(t - s).ln() / (cast::<T>((m + 1) as f64) * mu * delta)
}
