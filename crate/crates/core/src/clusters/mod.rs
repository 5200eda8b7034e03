//! Spectral clusters of the reference operator: detection and (Hgap)
//! diagnostics, dyadic regrouping, enlarged clusters for perturbed
//! operators, and the constant-selection formulas.

pub mod constants;

pub use constants::{
    analytic_normalization, choose_constants_analytic, choose_constants_smooth, delta_exponent,
    n_cutoff, smallest_j_condz, sum_inequality_constant, sum_inequality_lhs, td_constant,
    AnalyticConstants,
};

use crate::error::{Error, Result};
use crate::scalar::{cast, to_f64, Real};
use crate::spectral::{scale_operator_norm, OperatorSampler, SpectralModel};
use crate::stats::{log_log_fit, LineFit};
use serde::{Deserialize, Serialize};

/// Rule deciding where one cluster ends and the next begins.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum GapPolicy {
    /// Every numerically distinct eigenvalue is its own cluster; eigenvalues
    /// closer than `rel_tol·max(1,|λ|)` form one multiplet.
    Multiplet { rel_tol: f64 },
    /// A spacing is a boundary when it exceeds `factor` times the median of
    /// the `window` spacings on each side of it.
    MedianRatio { factor: f64, window: usize, rel_tol: f64 },
}

impl Default for GapPolicy {
    fn default() -> Self {
        GapPolicy::Multiplet { rel_tol: 1e-9 }
    }
}

impl GapPolicy {
    pub fn median_ratio() -> Self {
        GapPolicy::MedianRatio {
            factor: 3.0,
            window: 2,
            rel_tol: 1e-9,
        }
    }

    fn rel_tol(&self) -> f64 {
        match *self {
            GapPolicy::Multiplet { rel_tol } | GapPolicy::MedianRatio { rel_tol, .. } => rel_tol,
        }
    }

    /// Boundary flags for the spacings between consecutive eigenvalues.
    fn boundaries(&self, eigs: &[f64]) -> Vec<bool> {
        let spacings: Vec<f64> = eigs.windows(2).map(|w| w[1] - w[0]).collect();
        let tol = self.rel_tol();
        let degenerate: Vec<bool> = eigs
            .windows(2)
            .zip(&spacings)
            .map(|(w, &s)| s <= tol * w[1].abs().max(1.0))
            .collect();
        match *self {
            GapPolicy::Multiplet { .. } => degenerate.iter().map(|d| !d).collect(),
            GapPolicy::MedianRatio { factor, window, .. } => (0..spacings.len())
                .map(|i| {
                    if degenerate[i] {
                        return false;
                    }
                    let lo = i.saturating_sub(window);
                    let hi = (i + window + 1).min(spacings.len());
                    let mut nb: Vec<f64> = (lo..hi).filter(|&k| k != i).map(|k| spacings[k]).collect();
                    if nb.is_empty() {
                        return true;
                    }
                    nb.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
                    let med = if nb.len() % 2 == 1 {
                        nb[nb.len() / 2]
                    } else {
                        0.5 * (nb[nb.len() / 2 - 1] + nb[nb.len() / 2])
                    };
                    spacings[i] > factor * med
                })
                .collect(),
        }
    }
}

/// Options for [`detect_clusters`].
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectOptions {
    pub policy: GapPolicy,
    /// Inclusive 1-based gap-index window [j_min, j_max] for the μ fit.
    pub fit_window: Option<(usize, usize)>,
}

/// One cluster: a closed interval and the eigenvalue indices it owns.
#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct Cluster<T: Real> {
    pub lo: T,
    pub hi: T,
    /// First member eigenvalue index (0-based).
    pub first: usize,
    pub count: usize,
}

/// Diagnostics of the increasing-gap hypothesis on a decomposition.
#[derive(Clone, Debug, Serialize)]
pub struct GapReport {
    pub fit: Option<LineFit>,
    pub fit_window: (usize, usize),
    pub trusted_clusters: usize,
    /// μ > 0 and the fitted two-sided constant α is finite.
    pub gap2_pass: bool,
    /// max_j δ_j / j^{μ+1}: the diameter constant for the j^{μ+1} reading.
    pub beta_mu_plus_one: f64,
    /// Whether the diameters satisfy δ_j ≲ j^μ.
    pub diameters_within_mu: bool,
    /// Whether the diameters satisfy δ_j ≲ j^{μ+1}.
    pub diameters_within_mu_plus_one: bool,
    /// Fitted exponent of min σ_j against j.
    pub location_exponent: Option<f64>,
    pub c1: f64,
    pub c2: f64,
    pub loc_pass: bool,
}

/// Diagnostics of a dyadic regrouping.
#[derive(Clone, Debug, Serialize)]
pub struct RegroupReport {
    pub alpha_tilde: f64,
    pub beta_tilde: f64,
    pub c1_tilde: f64,
    pub c2_tilde: f64,
    /// max_j max σ̃_j / min σ̃_j over complete blocks.
    pub energy_ratio: f64,
    pub eqenergy_pass: bool,
    pub partial_last_block: bool,
}

/// Spectral clusters σ_j with gaps, diameters and fitted exponents.
#[derive(Clone, Debug, Serialize)]
pub struct ClusterDecomposition<T: Real> {
    pub clusters: Vec<Cluster<T>>,
    /// Δ_j = dist(σ_{j+1}, σ_j), length clusters − 1.
    pub gaps: Vec<T>,
    /// δ_j = diam σ_j.
    pub diameters: Vec<T>,
    pub mu: T,
    pub alpha: T,
    pub beta: T,
    /// Dyadic parameter; 0 when not regrouped.
    pub j: u32,
    /// Eigenvalue index → cluster index.
    pub member_index: Vec<usize>,
    /// Enlargement applied on each side of every cluster (empty if none).
    pub margins: Vec<T>,
    pub report: GapReport,
    pub regroup: Option<RegroupReport>,
}

impl<T: Real> ClusterDecomposition<T> {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Serializes to pretty JSON.
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Index of the cluster interval containing x, if any.
    pub fn locate(&self, x: T) -> Option<usize> {
        let idx = self.clusters.partition_point(|c| c.hi < x);
        (idx < self.clusters.len() && self.clusters[idx].lo <= x).then_some(idx)
    }

    /// Index of the cluster interval closest to x.
    pub fn nearest(&self, x: T) -> usize {
        let mut best = (0, f64::INFINITY);
        for (i, c) in self.clusters.iter().enumerate() {
            let d = if x < c.lo {
                to_f64(c.lo - x)
            } else if x > c.hi {
                to_f64(x - c.hi)
            } else {
                0.0
            };
            if d < best.1 {
                best = (i, d);
            }
        }
        best.0
    }

    /// Δ̃_{j−1} for 1-based block index j, with Δ̃_0 := Δ̃_1.
    pub fn gap_before(&self, j: usize) -> T {
        assert!(j >= 1 && !self.gaps.is_empty());
        if j == 1 {
            self.gaps[0]
        } else {
            self.gaps[(j - 2).min(self.gaps.len() - 1)]
        }
    }
}

fn gaps_and_diameters<T: Real>(clusters: &[Cluster<T>]) -> (Vec<T>, Vec<T>) {
    let gaps = clusters.windows(2).map(|w| w[1].lo - w[0].hi).collect();
    let diam = clusters.iter().map(|c| c.hi - c.lo).collect();
    (gaps, diam)
}

fn member_index<T: Real>(clusters: &[Cluster<T>], n: usize) -> Vec<usize> {
    let mut idx = vec![0; n];
    for (ci, c) in clusters.iter().enumerate() {
        for slot in idx.iter_mut().skip(c.first).take(c.count) {
            *slot = ci;
        }
    }
    idx
}

/// Partitions the spectrum into clusters and fits the gap exponent μ.
pub fn detect_clusters<T: Real>(model: &SpectralModel<T>, opts: &DetectOptions) -> Result<ClusterDecomposition<T>> {
    let eigs = model.eigenvalues();
    if eigs.len() < 8 {
        return Err(Error::InvalidInput(format!(
            "cluster detection needs at least 8 eigenvalues, got {}",
            eigs.len()
        )));
    }
    let ef: Vec<f64> = eigs.iter().map(|&x| to_f64(x)).collect();
    let bounds = opts.policy.boundaries(&ef);
    let mut clusters = Vec::new();
    let mut first = 0;
    for i in 0..eigs.len() {
        let last = i + 1 == eigs.len() || bounds[i];
        if last {
            clusters.push(Cluster {
                lo: eigs[first],
                hi: eigs[i],
                first,
                count: i + 1 - first,
            });
            first = i + 1;
        }
    }
    if clusters.len() < 3 {
        return Err(Error::InsufficientClusters {
            found: clusters.len(),
            needed: 3,
        });
    }
    let (gaps, diameters) = gaps_and_diameters(&clusters);
    let trusted = clusters
        .iter()
        .take_while(|c| c.first + c.count <= model.observe_dim())
        .count()
        .max(3);
    let n_gaps_trusted = (trusted - 1).min(gaps.len());
    let window = match opts.fit_window {
        Some((a, b)) => {
            if a < 1 || b > gaps.len() || b < a + 1 {
                return Err(Error::InsufficientData(format!(
                    "fit window [{a}, {b}] outside the {} available gaps",
                    gaps.len()
                )));
            }
            (a, b)
        }
        None => ((n_gaps_trusted / 4).max(1), n_gaps_trusted),
    };
    let js: Vec<f64> = (window.0..=window.1).map(|j| j as f64).collect();
    let dj: Vec<f64> = (window.0..=window.1).map(|j| to_f64(gaps[j - 1])).collect();
    let fit = log_log_fit(&js, &dj);
    let mu_f = fit.map(|f| f.slope).unwrap_or(0.0);
    let report_data = gap_statistics(&clusters, &gaps, &diameters, window, mu_f);
    let member_index = member_index(&clusters, eigs.len());
    Ok(ClusterDecomposition {
        clusters,
        gaps,
        diameters,
        mu: cast(mu_f),
        alpha: cast(report_data.alpha),
        beta: cast(report_data.beta),
        j: 0,
        member_index,
        margins: Vec::new(),
        report: GapReport {
            fit,
            fit_window: window,
            trusted_clusters: trusted,
            gap2_pass: mu_f > 0.02 && report_data.alpha.is_finite(),
            beta_mu_plus_one: report_data.beta1,
            diameters_within_mu: report_data.diam_mu,
            diameters_within_mu_plus_one: report_data.diam_mu1,
            location_exponent: report_data.loc_exponent,
            c1: report_data.c1,
            c2: report_data.c2,
            loc_pass: report_data.loc_pass,
        },
        regroup: None,
    })
}

struct GapStats {
    alpha: f64,
    beta: f64,
    beta1: f64,
    diam_mu: bool,
    diam_mu1: bool,
    loc_exponent: Option<f64>,
    c1: f64,
    c2: f64,
    loc_pass: bool,
}

fn gap_statistics<T: Real>(
    clusters: &[Cluster<T>],
    gaps: &[T],
    diameters: &[T],
    window: (usize, usize),
    mu: f64,
) -> GapStats {
    let range = window.0..=window.1;
    let mut alpha: f64 = 1.0;
    let (mut beta, mut beta1, mut c1, mut c2) = (0.0f64, 0.0f64, f64::INFINITY, 0.0f64);
    for j in range.clone() {
        let jf = j as f64;
        let d = to_f64(gaps[j - 1]);
        let w = jf.powf(mu);
        alpha = alpha.max(d / w).max(w / d);
        let diam = to_f64(diameters[j - 1]);
        beta = beta.max(diam / w);
        beta1 = beta1.max(diam / (w * jf));
        c1 = c1.min(to_f64(clusters[j - 1].lo) / (w * jf));
        c2 = c2.max(to_f64(clusters[j - 1].hi) / (w * jf));
    }
    let js: Vec<f64> = range.clone().map(|j| j as f64).collect();
    let diam: Vec<f64> = range.clone().map(|j| to_f64(diameters[j - 1])).collect();
    let diam_slope = log_log_fit(&js, &diam).map(|f| f.slope);
    let (diam_mu, diam_mu1) = match diam_slope {
        None => (true, true),
        Some(s) => (s <= mu + 0.1, s <= mu + 1.1),
    };
    let lows: Vec<f64> = range.map(|j| to_f64(clusters[j - 1].lo)).collect();
    let loc_exponent = log_log_fit(&js, &lows).map(|f| f.slope);
    let loc_pass = c1 > 0.0 && loc_exponent.map(|s| (s - (mu + 1.0)).abs() <= 0.25).unwrap_or(false);
    GapStats {
        alpha,
        beta,
        beta1,
        diam_mu,
        diam_mu1,
        loc_exponent,
        c1,
        c2,
        loc_pass,
    }
}

/// Merges clusters into dyadic blocks: σ̃_1 = σ_1 ∪ … ∪ σ_{2^J} and
/// σ̃_j = σ_{2^{J+j−2}+1} ∪ … ∪ σ_{2^{J+j−1}} for j ≥ 2. A trailing block may be
/// incomplete when the truncation ends inside it.
pub fn dyadic_regroup<T: Real>(dec: &ClusterDecomposition<T>, j_param: u32) -> Result<ClusterDecomposition<T>> {
    if j_param == 0 {
        return Err(Error::InvalidInput("dyadic parameter J must be positive".into()));
    }
    if dec.j != 0 || !dec.margins.is_empty() {
        return Err(Error::InvalidInput("decomposition already regrouped".into()));
    }
    let needed = 1usize << (j_param + 1);
    if dec.len() < needed {
        return Err(Error::InsufficientClusters {
            found: dec.len(),
            needed,
        });
    }
    let mut blocks = Vec::new();
    let mut start = 0usize;
    let mut b = 1u32;
    let mut partial = false;
    while start < dec.len() {
        let end_full = if b == 1 { 1usize << j_param } else { 1usize << (j_param + b - 1) };
        let end = end_full.min(dec.len());
        partial = end < end_full;
        let members = &dec.clusters[start..end];
        let first = members[0].first;
        let count = members.iter().map(|c| c.count).sum();
        let lo = members.iter().map(|c| c.lo).fold(members[0].lo, |a, x| if x < a { x } else { a });
        let hi = members.iter().map(|c| c.hi).fold(members[0].hi, |a, x| if x > a { x } else { a });
        blocks.push(Cluster { lo, hi, first, count });
        start = end;
        b += 1;
    }
    let (gaps, diameters) = gaps_and_diameters(&blocks);
    let mu = to_f64(dec.mu);
    let complete = if partial { blocks.len() - 1 } else { blocks.len() };
    let (mut alpha, mut beta, mut c1, mut c2, mut ratio) = (1.0f64, 0.0f64, f64::INFINITY, 0.0f64, 1.0f64);
    for jb in 1..=complete {
        let scale = 2f64.powf((j_param as f64 + jb as f64 - 1.0) * mu);
        if jb <= gaps.len() {
            let d = to_f64(gaps[jb - 1]);
            alpha = alpha.max(scale / d).max(d / scale);
        }
        beta = beta.max(to_f64(diameters[jb - 1]) / (scale * 2f64.powf(j_param as f64 + jb as f64 - 1.0)));
        let loc_scale = 2f64.powf((j_param as f64 + jb as f64 - 1.0) * (mu + 1.0));
        let lo = to_f64(blocks[jb - 1].lo);
        let hi = to_f64(blocks[jb - 1].hi);
        if jb >= 2 {
            c1 = c1.min(lo / loc_scale);
        }
        c2 = c2.max(hi / loc_scale);
        ratio = ratio.max(hi / lo);
    }
    let c1 = if c1.is_finite() { c1 } else { to_f64(blocks[0].lo) / 2f64.powf(j_param as f64 * (mu + 1.0)) };
    let member_index = member_index(&blocks, dec.member_index.len());
    Ok(ClusterDecomposition {
        clusters: blocks,
        gaps,
        diameters,
        mu: dec.mu,
        alpha: dec.alpha,
        beta: dec.beta,
        j: j_param,
        member_index,
        margins: Vec::new(),
        report: dec.report.clone(),
        regroup: Some(RegroupReport {
            alpha_tilde: alpha,
            beta_tilde: beta,
            c1_tilde: c1,
            c2_tilde: c2,
            energy_ratio: ratio,
            eqenergy_pass: ratio <= c2 / c1 * (1.0 + 1e-12),
            partial_last_block: partial,
        }),
    })
}

/// Enlarges each σ̃_j by Δ̃_{j−1}/4 on both sides (Δ̃_0 := Δ̃_1).
pub fn perturbed_clusters<T: Real>(dec: &ClusterDecomposition<T>) -> Result<ClusterDecomposition<T>> {
    if dec.j == 0 {
        return Err(Error::InvalidInput("perturbed clusters need a dyadically regrouped decomposition".into()));
    }
    if !dec.margins.is_empty() {
        return Err(Error::InvalidInput("clusters already enlarged".into()));
    }
    let quarter = cast::<T>(0.25);
    let margins: Vec<T> = (1..=dec.len()).map(|j| dec.gap_before(j) * quarter).collect();
    let clusters: Vec<Cluster<T>> = dec
        .clusters
        .iter()
        .zip(&margins)
        .map(|(c, &m)| Cluster {
            lo: c.lo - m,
            hi: c.hi + m,
            first: c.first,
            count: c.count,
        })
        .collect();
    for (i, w) in clusters.windows(2).enumerate() {
        if !(w[0].hi < w[1].lo) {
            return Err(Error::ClusterOverlap { left: i + 1, right: i + 2 });
        }
    }
    let (gaps, diameters) = gaps_and_diameters(&clusters);
    Ok(ClusterDecomposition {
        clusters,
        gaps,
        diameters,
        margins,
        report: dec.report.clone(),
        regroup: dec.regroup.clone(),
        member_index: dec.member_index.clone(),
        ..*dec_scalars(dec)
    })
}

impl<T: Real> ClusterDecomposition<T> {
    /// Decomposition with the given intervals used as-is (no fits, no
    /// enlargement), for hand-built examples. Intervals must be increasing
    /// and disjoint and must partition the eigenvalue indices `0..n`.
    pub fn from_intervals(clusters: Vec<Cluster<T>>, mu: T) -> Result<Self> {
        if clusters.len() < 2 {
            return Err(Error::InsufficientClusters { found: clusters.len(), needed: 2 });
        }
        let mut next = 0;
        for (i, c) in clusters.iter().enumerate() {
            if c.first != next || c.count == 0 || c.hi < c.lo {
                return Err(Error::InvalidInput(format!("cluster {} does not continue the index partition", i + 1)));
            }
            next += c.count;
        }
        for (i, w) in clusters.windows(2).enumerate() {
            if !(w[0].hi < w[1].lo) {
                return Err(Error::ClusterOverlap { left: i + 1, right: i + 2 });
            }
        }
        let (gaps, diameters) = gaps_and_diameters(&clusters);
        let member_index = member_index(&clusters, next);
        let n = clusters.len();
        Ok(ClusterDecomposition {
            clusters,
            gaps,
            diameters,
            mu,
            alpha: T::one(),
            beta: T::zero(),
            j: 1,
            member_index,
            margins: Vec::new(),
            report: GapReport {
                fit: None,
                fit_window: (1, n - 1),
                trusted_clusters: n,
                gap2_pass: true,
                beta_mu_plus_one: 0.0,
                diameters_within_mu: true,
                diameters_within_mu_plus_one: true,
                location_exponent: None,
                c1: 0.0,
                c2: 0.0,
                loc_pass: true,
            },
            regroup: None,
        })
    }

    /// Gap Δ̃_{j−1} of the underlying blocks before enlargement, for 1-based
    /// block index j, with Δ̃_0 := Δ̃_1.
    pub fn block_gap_before(&self, j: usize) -> T {
        let g = if j <= 1 { 1 } else { (j - 1).min(self.gaps.len()) };
        let mut gap = self.gaps[g - 1];
        if !self.margins.is_empty() {
            gap += self.margins[g - 1] + self.margins[g];
        }
        gap
    }
}

fn dec_scalars<T: Real>(dec: &ClusterDecomposition<T>) -> Box<ClusterDecomposition<T>> {
    Box::new(ClusterDecomposition {
        clusters: Vec::new(),
        gaps: Vec::new(),
        diameters: Vec::new(),
        mu: dec.mu,
        alpha: dec.alpha,
        beta: dec.beta,
        j: dec.j,
        member_index: Vec::new(),
        margins: Vec::new(),
        report: dec.report.clone(),
        regroup: None,
    })
}

/// max_i λ_i^ν / |λ_i − z| for complex z = x + iy.
fn resolvent_weight(eigs: &[f64], nu: f64, x: f64, y: f64) -> f64 {
    eigs.iter()
        .map(|&l| l.powf(nu) / ((l - x).powi(2) + y * y).sqrt())
        .fold(0.0, f64::max)
}

/// C_H: the sup over gap interiors [λ_l^+ + Δ_l/4, λ_{l+1}^− − Δ_l/4] of
/// ‖H^ν(H − z)^{−1}‖·(2l)^{μδ}, measured on an undecorated decomposition
/// (the gap after block j of the J-regrouping is the gap with l = 2^{J+j−1}).
pub fn measure_c_h<T: Real>(model: &SpectralModel<T>, dec: &ClusterDecomposition<T>, nu: T, mu_delta: T) -> f64 {
    let eigs: Vec<f64> = model.eigenvalues().iter().map(|&x| to_f64(x)).collect();
    let (nu, md) = (to_f64(nu), to_f64(mu_delta));
    let trusted = dec.report.trusted_clusters.min(dec.len()) - 1;
    let mut best = 0.0f64;
    for l in 1..=trusted.min(dec.gaps.len()) {
        let gap = to_f64(dec.gaps[l - 1]);
        let a = to_f64(dec.clusters[l - 1].hi) + gap / 4.0;
        let b = to_f64(dec.clusters[l].lo) - gap / 4.0;
        for k in 0..64 {
            let x = a + (b - a) * k as f64 / 63.0;
            let w = resolvent_weight(&eigs, nu, x, 0.0) * (2.0 * l as f64).powf(md);
            best = best.max(w);
        }
    }
    best
}

/// C̃_H: max over blocks j and over z on the vertical gap midlines bounding
/// Γ_j of ‖H^ν(H − z)^{−1}‖·Δ̃_{j−1}^δ, with 64 samples per midline.
pub fn measure_c_tilde_h<T: Real>(model: &SpectralModel<T>, dec: &ClusterDecomposition<T>, nu: T, delta: T) -> f64 {
    let eigs: Vec<f64> = model.eigenvalues().iter().map(|&x| to_f64(x)).collect();
    let (nu, delta) = (to_f64(nu), to_f64(delta));
    let mut best = 0.0f64;
    for g in 1..=dec.gaps.len() {
        let gap = to_f64(dec.gaps[g - 1]);
        let x = 0.5 * (to_f64(dec.clusters[g - 1].hi) + to_f64(dec.clusters[g].lo));
        // Γ_g (right midline) and Γ_{g+1} (left midline) share this line.
        let weight = to_f64(dec.gap_before(g)).powf(delta).max(gap.powf(delta));
        for k in 0..64 {
            let y = 4.0 * gap * k as f64 / 63.0;
            best = best.max(resolvent_weight(&eigs, nu, x, y) * weight);
        }
    }
    best
}

/// Outcome of [`choose_j_smooth`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct JChoice {
    pub j: u32,
    pub c_h: f64,
    /// sup over the sampled times of ‖V(t)H^{−ν}‖.
    pub v_norm: f64,
    pub mu_delta: f64,
}

/// Smallest J satisfying 2^{Jμδ} ≥ 16·C_H·sup_t‖V(t)H^{−ν}‖ with C_H measured.
pub fn choose_j_smooth<T: Real>(
    model: &SpectralModel<T>,
    dec: &ClusterDecomposition<T>,
    v: &dyn OperatorSampler<T>,
    times: &[T],
) -> Result<JChoice> {
    let nu = v.nu();
    let delta = delta_exponent(dec.mu, nu)?;
    let md = dec.mu * delta;
    let c_h = measure_c_h(model, dec, nu, md);
    let v_norm = times
        .iter()
        .map(|&t| to_f64(scale_operator_norm(model, &v.eval(t), T::zero(), nu)))
        .fold(0.0, f64::max);
    Ok(JChoice {
        j: smallest_j_condz(to_f64(md), c_h, v_norm),
        c_h,
        v_norm,
        mu_delta: to_f64(md),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{ConstantSampler, Envelope, ModulatedSampler, TermMatrix};
    use crate::OperatorMatrix;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn torus_eigs(n: usize) -> Vec<f64> {
        let mut v = vec![1.0];
        for k in 1..=n {
            v.push((k * k + 1) as f64);
            v.push((k * k + 1) as f64);
        }
        v
    }

    #[test]
    fn torus_clusters_and_mu() {
        let m = SpectralModel::new((0..=200).map(|n| ((n * n) as f64) + 1.0).collect(), "sq").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        assert_eq!(d.len(), 201);
        for (j, g) in d.gaps.iter().enumerate() {
            assert_eq!(*g, (2 * j + 1) as f64);
        }
        assert!((d.mu - 1.0).abs() < 0.05, "mu {}", d.mu);
        assert!(d.report.gap2_pass && d.report.loc_pass);
    }

    #[test]
    fn degenerate_pairs_are_co_clustered() {
        let m = SpectralModel::new(torus_eigs(20), "torus").unwrap();
        for policy in [GapPolicy::default(), GapPolicy::median_ratio()] {
            let d = detect_clusters(&m, &DetectOptions { policy, fit_window: None }).unwrap();
            for c in &d.clusters {
                let members = &m.eigenvalues()[c.first..c.first + c.count];
                for w in m.eigenvalues().windows(2) {
                    if w[0] == w[1] {
                        assert!(!(members.contains(&w[0]) ^ members.contains(&w[1])));
                    }
                }
            }
        }
    }

    #[test]
    fn harmonic_spectrum_fails_gap_hypothesis() {
        let m = SpectralModel::new((0..100).map(|n| 2.0 * n as f64 + 1.0).collect(), "ho").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        assert!(d.gaps.iter().all(|&g| (g - 2.0).abs() < 1e-12));
        assert!(d.mu.abs() < 1e-10);
        assert!(!d.report.gap2_pass);
    }

    #[test]
    fn median_ratio_finds_multiplets() {
        // three near-degenerate triplets separated by big gaps
        let mut e = Vec::new();
        for c in [10.0, 50.0, 120.0, 250.0] {
            e.extend([c, c + 0.1, c + 0.2]);
        }
        let m = SpectralModel::new(e, "trip").unwrap();
        let d = detect_clusters(&m, &DetectOptions { policy: GapPolicy::median_ratio(), fit_window: None }).unwrap();
        assert_eq!(d.len(), 4);
        assert!(d.clusters.iter().all(|c| c.count == 3));
        assert!(matches!(
            detect_clusters(&SpectralModel::new(vec![1.0; 9], "x").unwrap(), &DetectOptions::default()),
            Err(Error::InsufficientClusters { .. })
        ));
    }

    #[test]
    fn regroup_index_pattern() {
        let m = SpectralModel::new((1..=8).map(|n| (n * n) as f64).collect(), "8").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let r = dyadic_regroup(&d, 1).unwrap();
        let firsts: Vec<(usize, usize)> = r.clusters.iter().map(|c| (c.first, c.count)).collect();
        assert_eq!(firsts, vec![(0, 2), (2, 2), (4, 4)]);
        assert!(dyadic_regroup(&d, 2).is_ok());
        assert!(matches!(dyadic_regroup(&d, 3), Err(Error::InsufficientClusters { found: 8, needed: 16 })));
    }

    #[test]
    fn regrouped_gaps_match_brute_force() {
        let m = SpectralModel::new(torus_eigs(40), "torus").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let r = dyadic_regroup(&d, 2).unwrap();
        let eig = m.eigenvalues();
        for (g, w) in r.gaps.iter().zip(r.clusters.windows(2)) {
            let mut best = f64::INFINITY;
            for a in &eig[w[0].first..w[0].first + w[0].count] {
                for b in &eig[w[1].first..w[1].first + w[1].count] {
                    best = best.min((b - a).abs());
                }
            }
            assert_eq!(*g, best);
        }
        // covering: each eigenvalue in exactly one block
        for (i, &x) in eig.iter().enumerate() {
            let hits: Vec<usize> = (0..r.len()).filter(|&k| r.clusters[k].lo <= x && x <= r.clusters[k].hi).collect();
            assert_eq!(hits, vec![r.member_index[i]]);
        }
    }

    #[test]
    fn enlargement_example_and_overlap() {
        let m = SpectralModel::new(vec![1.0, 2.0, 6.0, 7.0, 20.0, 21.0, 22.0, 23.0, 60.0, 61.0], "x").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let mut r = dyadic_regroup(&d, 1).unwrap();
        // replace by the two-block example [0,1], [5,6]
        r.clusters = vec![
            Cluster { lo: 0.0, hi: 1.0, first: 0, count: 1 },
            Cluster { lo: 5.0, hi: 6.0, first: 1, count: 1 },
        ];
        r.gaps = vec![4.0];
        let p = perturbed_clusters(&r).unwrap();
        assert_eq!((p.clusters[0].lo, p.clusters[0].hi), (-1.0, 2.0));
        assert_eq!((p.clusters[1].lo, p.clusters[1].hi), (4.0, 7.0));
        r.clusters.push(Cluster { lo: 6.1, hi: 7.0, first: 2, count: 1 });
        r.gaps = vec![4.0, 0.1];
        assert!(matches!(perturbed_clusters(&r), Err(Error::ClusterOverlap { .. })));
    }

    #[test]
    fn torus_enlarged_blocks_disjoint_and_contain_originals() {
        let m = SpectralModel::new(torus_eigs(64), "torus").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let r = dyadic_regroup(&d, 2).unwrap();
        let p = perturbed_clusters(&r).unwrap();
        for w in p.clusters.windows(2) {
            assert!(w[0].hi < w[1].lo);
        }
        for (a, b) in r.clusters.iter().zip(&p.clusters) {
            assert!(b.lo <= a.lo && a.hi <= b.hi);
        }
    }

    #[test]
    fn j_choice_zero_perturbation_and_brute_force() {
        let m = SpectralModel::new(torus_eigs(64), "torus").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let zero = ConstantSampler::new(OperatorMatrix::zeros(m.dim()));
        let c = choose_j_smooth(&m, &d, &zero, &[0.0]).unwrap();
        assert_eq!(c.j, 1);
        let n = m.dim();
        let band = (0..n)
            .flat_map(|i| (0..n).filter(move |&k| k != i && (i as i64 - k as i64).abs() == 2).map(move |k| (i, k)))
            .fold(crate::CMatrix::<f64>::zeros(n, n), |mut acc, (i, k)| {
                acc[(i, k)] = nalgebra::Complex::new(0.5, 0.0);
                acc
            });
        let v = ModulatedSampler::new(n).term(Envelope::cosine(1.0, 1.0, 0.0), TermMatrix::Dense(band));
        let times: Vec<f64> = (0..5).map(|k| k as f64 * 0.7).collect();
        let c = choose_j_smooth(&m, &d, &v, &times).unwrap();
        let first = (1..=20u32)
            .find(|&j| 2f64.powf(j as f64 * c.mu_delta) >= 16.0 * c.c_h * c.v_norm)
            .unwrap();
        assert_eq!(c.j, first);
    }

    #[test]
    fn resolvent_constants_are_finite() {
        let m = SpectralModel::new(torus_eigs(64), "torus").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let r = dyadic_regroup(&d, 2).unwrap();
        let ch = measure_c_h(&m, &d, 0.0, 1.0);
        let cth = measure_c_tilde_h(&m, &r, 0.0, 1.0);
        assert!(ch.is_finite() && ch > 0.0);
        assert!(cth.is_finite() && cth > 0.0);
        // at z = midpoint, ν = 0: weight = 2/Δ̃ · Δ̃ = 2 for the own gap
        assert!(cth >= 2.0 - 1e-12);
        assert_relative_eq!(resolvent_weight(&[1.0, 3.0], 0.0, 2.0, 0.0), 1.0);
    }

    #[test]
    fn json_roundtrip_has_fields() {
        let m = SpectralModel::new(torus_eigs(16), "torus").unwrap();
        let d = detect_clusters(&m, &DetectOptions::default()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&d.to_json().unwrap()).unwrap();
        for key in ["clusters", "gaps", "diameters", "mu", "alpha", "beta", "j", "member_index"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn regroup_preserves_covering(incs in proptest::collection::vec(0.0f64..5.0, 40), j in 1u32..3) {
            let mut e = vec![1.0];
            for (k, d) in incs.iter().enumerate() {
                let step = if *d < 1.0 { 0.0 } else { d + k as f64 * 0.5 };
                e.push(e.last().unwrap() + step);
            }
            let m = SpectralModel::new(e, "rand").unwrap();
            let Ok(d) = detect_clusters(&m, &DetectOptions::default()) else { return Ok(()); };
            let Ok(r) = dyadic_regroup(&d, j) else { return Ok(()); };
            for (i, &x) in m.eigenvalues().iter().enumerate() {
                let hits = r.clusters.iter().filter(|c| c.lo <= x && x <= c.hi).count();
                prop_assert_eq!(hits, 1);
                prop_assert_eq!(r.locate(x), Some(r.member_index[i]));
            }
            if let Ok(p) = perturbed_clusters(&r) {
                for (a, b) in r.clusters.iter().zip(&p.clusters) {
                    prop_assert!(b.lo <= a.lo && a.hi <= b.hi);
                }
                for w in p.clusters.windows(2) {
                    prop_assert!(w[0].hi < w[1].lo);
                }
            }
        }
    }
}
