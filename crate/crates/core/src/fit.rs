//! Growth-exponent fits of norm series against the polynomial, exponential
//! and log-power regimes, and ε-bound constants.

use crate::error::{Error, Result};
use crate::stats::{line_fit, LineFit};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrowthRegime {
    /// log‖ψ‖ against log t.
    Polynomial,
    /// log‖ψ‖ against t.
    Exponential,
    /// log‖ψ‖ against log log t.
    Loglog,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Respected,
    Violated,
    Inconclusive,
}

/// Fitted exponent (or rate) with its standard error and, when a bound is
/// attached, the verdict.
#[derive(Clone, Debug, Serialize)]
pub struct FitReport {
    pub regime: GrowthRegime,
    pub exponent: f64,
    pub stderr: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub t_min: f64,
    pub bound: Option<f64>,
    pub verdict: Option<Verdict>,
}

impl FitReport {
    /// Attaches an upper bound: respected when the fit does not exceed it,
    /// violated when it exceeds it by more than three standard errors.
    pub fn with_bound(mut self, bound: f64) -> Self {
        let verdict = if self.exponent <= bound {
            Verdict::Respected
        } else if self.exponent - bound > 3.0 * self.stderr {
            Verdict::Violated
        } else {
            Verdict::Inconclusive
        };
        self.bound = Some(bound);
        self.verdict = Some(verdict);
        self
    }
}

/// Polynomial growth bound k/(2(1−τ)) for the H^k norm.
pub fn polynomial_bound(k: f64, tau: f64) -> f64 {
    k / (2.0 * (1.0 - tau))
}

/// Log-power growth bound (k/2)(μ/(μ+1) − ν)^{−1}.
pub fn log_power_bound(k: f64, mu: f64, nu: f64) -> f64 {
    0.5 * k / (mu / (mu + 1.0) - nu)
}

/// Least-squares fit of log norm against the regime's time variable over the
/// points with t ≥ t_min. Needs at least ten such points spanning a decade.
pub fn fit_growth(series: &[(f64, f64)], regime: GrowthRegime, t_min: f64) -> Result<FitReport> {
    let pts: Vec<(f64, f64)> = series
        .iter()
        .copied()
        .filter(|&(t, n)| t >= t_min && t > 0.0 && n > 0.0)
        .collect();
    if pts.len() < 10 {
        return Err(Error::InsufficientData(format!(
            "growth fit needs at least 10 positive samples past t_min = {t_min}, got {}",
            pts.len()
        )));
    }
    let first = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
    let last = pts.iter().map(|p| p.0).fold(0.0, f64::max);
    if last < 10.0 * first {
        return Err(Error::InsufficientData(format!(
            "growth fit window [{first}, {last}] spans less than a decade"
        )));
    }
    if regime == GrowthRegime::Loglog && first <= 1.0 {
        return Err(Error::InsufficientData("log-log regime needs t > 1".into()));
    }
    let x: Vec<f64> = pts
        .iter()
        .map(|&(t, _)| match regime {
            GrowthRegime::Polynomial => t.ln(),
            GrowthRegime::Exponential => t,
            GrowthRegime::Loglog => t.ln().ln(),
        })
        .collect();
    let y: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let LineFit {
        slope,
        intercept,
        slope_stderr,
        r_squared,
        points,
    } = line_fit(&x, &y).ok_or_else(|| Error::InsufficientData("degenerate fit abscissae".into()))?;
    Ok(FitReport {
        regime,
        exponent: slope,
        stderr: slope_stderr,
        intercept,
        r_squared,
        points,
        t_min,
        bound: None,
        verdict: None,
    })
}

/// One row of [`compare_epsilon_bound`].
#[derive(Clone, Debug, Serialize)]
pub struct EpsilonRow {
    pub epsilon: f64,
    /// sup over the full window of ‖ψ(t)‖/⟨t−s⟩^ε.
    pub c_full: f64,
    /// The same sup over the first half of the window.
    pub c_half: f64,
    /// Whether extending the window raised C by at most 2%.
    pub stabilized: bool,
}

/// Smallest constants C with ‖ψ(t)‖ ≤ C⟨t−s⟩^ε on the sampled window, for each
/// ε, together with a stability check against the half window.
pub fn compare_epsilon_bound(series: &[(f64, f64)], s: f64, epsilons: &[f64]) -> Vec<EpsilonRow> {
    let t_end = series.iter().map(|p| p.0).fold(s, f64::max);
    let half = s + 0.5 * (t_end - s);
    epsilons
        .iter()
        .map(|&eps| {
            let c = |upto: f64| {
                series
                    .iter()
                    .filter(|p| p.0 <= upto)
                    .map(|&(t, n)| n / (1.0 + (t - s).powi(2)).sqrt().powf(eps))
                    .fold(0.0, f64::max)
            };
            let (c_full, c_half) = (c(t_end), c(half));
            EpsilonRow {
                epsilon: eps,
                c_full,
                c_half,
                stabilized: c_full.is_finite() && c_full <= c_half * 1.02,
            }
        })
        .collect()
}
