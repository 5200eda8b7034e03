//! Experiment driver: JSON configuration, the pipeline model → clusters →
//! hierarchy → propagation → fits, and the artifacts written to disk.

use crate::adiabatic::{
    adiabatic_decomposition, build_hierarchy, duhamel_compare, intertwining_defect, AdiabaticHierarchy, DuhamelReport,
    HierarchyOptions, HierarchySummary, IntertwiningReport,
};
use crate::clusters::{choose_constants_smooth, delta_exponent, detect_clusters, smallest_j_condz, ClusterDecomposition, DetectOptions};
use crate::error::{Error, Result};
use crate::fit::{compare_epsilon_bound, fit_growth, log_power_bound, polynomial_bound, EpsilonRow, FitReport, GrowthRegime};
use crate::models::{BuiltModel, InitialState, ModelSpec};
use crate::propagator::{floquet_operator, propagate, FloquetResult, PropagatorConfig, Trajectory};
use crate::spectral::StateVector;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub model: ModelSpec,
    pub propagation: PropagatorConfig,
    pub sobolev_ks: Vec<f64>,
    pub initial: InitialState,
    #[serde(default)]
    pub adiabatic: Option<AdiabaticConfig>,
    pub fit: FitConfig,
    #[serde(default)]
    pub floquet: Option<FloquetConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

/// Depth either given directly or chosen from a target growth exponent ε.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdiabaticConfig {
    #[serde(default)]
    pub depth: Option<usize>,
    #[serde(default)]
    pub epsilon: Option<f64>,
    /// Dyadic parameter; chosen from ‖V‖ when absent.
    #[serde(default)]
    pub j: Option<u32>,
    #[serde(default)]
    pub detect: DetectOptions,
    /// Diagnostic sample times; five points across the span when empty.
    #[serde(default)]
    pub sample_times: Vec<f64>,
    /// Chebyshev nodes tabulating B_M over the propagation span (0 disables
    /// the intertwining and Duhamel reports).
    #[serde(default = "default_nodes")]
    pub interpolation_nodes: usize,
    #[serde(default)]
    pub check_algebra: bool,
}

fn default_nodes() -> usize {
    24
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    pub regime: GrowthRegime,
    pub t_min: f64,
    /// Sobolev index whose norm is fitted; the largest of `sobolev_ks` when absent.
    #[serde(default)]
    pub k: Option<f64>,
    /// Explicit bound on the fitted exponent.
    #[serde(default)]
    pub bound: Option<f64>,
    /// τ for the polynomial bound k/(2(1−τ)).
    #[serde(default)]
    pub tau: Option<f64>,
    /// ε values for the ⟨t−s⟩^ε constant table.
    #[serde(default)]
    pub epsilons: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetConfig {
    pub period: f64,
}

/// Artifact file names, relative to the output directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub spectrum: String,
    pub clusters: String,
    pub trajectory: String,
    pub fit: String,
    pub hierarchy: String,
    pub floquet: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            spectrum: "spectrum.csv".into(),
            clusters: "clusters.json".into(),
            trajectory: "trajectory.csv".into(),
            fit: "fit.json".into(),
            hierarchy: "hierarchy.json".into(),
            floquet: "floquet.csv".into(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!("schema_version {} unsupported (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if self.sobolev_ks.is_empty() {
            return bad("sobolev_ks must not be empty".into());
        }
        if let Some(k) = self.sobolev_ks.iter().find(|k| !(**k >= 0.0)) {
            return bad(format!("sobolev index {k} must be nonnegative"));
        }
        self.propagation.validate().map_err(|e| Error::Config(e.to_string()))?;
        let [s, t] = self.propagation.t_span;
        let (lo, hi) = (s.min(t), s.max(t));
        if !(self.fit.t_min >= lo && self.fit.t_min < hi) {
            return bad(format!("fit t_min {} outside the propagation span [{lo}, {hi}]", self.fit.t_min));
        }
        if let Some(k) = self.fit.k {
            if !self.sobolev_ks.contains(&k) {
                return bad(format!("fit index {k} is not among sobolev_ks"));
            }
        }
        if let Some(a) = &self.adiabatic {
            match (a.depth, a.epsilon) {
                (Some(_), Some(_)) => return bad("adiabatic: give either depth or epsilon, not both".into()),
                (None, None) => return bad("adiabatic: one of depth or epsilon is required".into()),
                (None, Some(e)) if !(e > 0.0) => return bad("adiabatic: epsilon must be positive".into()),
                _ => {}
            }
            if a.interpolation_nodes == 1 {
                return bad("adiabatic: interpolation_nodes must be 0 or at least 2".into());
            }
        }
        if let Some(f) = &self.floquet {
            if !(f.period > 0.0) {
                return bad("floquet period must be positive".into());
            }
        }
        Ok(())
    }

    fn fit_k(&self) -> f64 {
        self.fit.k.unwrap_or_else(|| self.sobolev_ks.iter().copied().fold(0.0, f64::max))
    }
}

/// The built model and initial datum shared by every subcommand.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub built: BuiltModel<f64>,
    pub psi: StateVector<f64>,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate().map_err(|e| e.at("config"))?;
    let built = config.model.build::<f64>(config.seed).map_err(|e| {
        let e = if e.exit_code() == 1 { Error::ModelValidation(e.to_string()) } else { e };
        e.at("model")
    })?;
    let psi = built.initial_state(&config.initial, config.seed).map_err(|e| e.at("initial state"))?;
    Ok(Prepared {
        config: config.clone(),
        built,
        psi,
    })
}

/// Eigenvalues of H as CSV with columns `index,eigenvalue`.
pub fn spectrum_csv(p: &Prepared) -> Result<String> {
    let mut out = csv::Writer::from_writer(Vec::new());
    out.write_record(["index", "eigenvalue"]).map_err(csv_err)?;
    for (i, v) in p.built.model.eigenvalues().iter().enumerate() {
        out.write_record([i.to_string(), format!("{v}")]).map_err(csv_err)?;
    }
    let bytes = out.into_inner().map_err(|e| Error::Io(std::io::Error::other(e.to_string())))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Detected clusters, or the hierarchy's enlarged dyadic blocks when an
/// adiabatic section is configured.
pub fn clusters(p: &Prepared) -> Result<ClusterDecomposition<f64>> {
    match &p.config.adiabatic {
        None => detect_clusters(&p.built.model, &DetectOptions::default()).map_err(|e| e.at("clusters")),
        Some(a) => {
            let j = dyadic_parameter(p, a)?;
            adiabatic_decomposition(&p.built.model, j, &a.detect).map_err(|e| e.at("clusters"))
        }
    }
}

fn dyadic_parameter(p: &Prepared, a: &AdiabaticConfig) -> Result<u32> {
    if let Some(j) = a.j {
        return Ok(j);
    }
    let dec = detect_clusters(&p.built.model, &a.detect).map_err(|e| e.at("clusters"))?;
    let delta = delta_exponent(dec.mu, p.built.nu).map_err(|e| e.at("clusters"))?;
    let v_norm = match &p.built.perturbation {
        None => 0.0,
        Some(v) => sample_times(&p.config, a)
            .iter()
            .map(|&t| v.eval(t).spectral_norm())
            .fold(0.0, f64::max),
    };
    Ok(smallest_j_condz(dec.mu * delta, 1.0, v_norm))
}

fn sample_times(cfg: &ExperimentConfig, a: &AdiabaticConfig) -> Vec<f64> {
    if !a.sample_times.is_empty() {
        return a.sample_times.clone();
    }
    let [s, t] = cfg.propagation.t_span;
    (0..5).map(|i| s + (t - s) * i as f64 / 4.0).collect()
}

/// Depth M: as configured, or the smallest M reaching the target ε for the
/// fitted Sobolev index.
pub fn hierarchy_depth(p: &Prepared, a: &AdiabaticConfig, dec: &ClusterDecomposition<f64>) -> Result<usize> {
    match (a.depth, a.epsilon) {
        (Some(m), _) => Ok(m),
        (None, Some(eps)) => {
            let delta = delta_exponent(dec.mu, p.built.nu)?;
            let n = (p.config.fit_k() / 2.0).ceil().max(1.0) as u32;
            Ok(choose_constants_smooth(eps, dec.mu, delta, n)? as usize)
        }
        (None, None) => Err(Error::Config("adiabatic: one of depth or epsilon is required".into())),
    }
}

/// Hierarchy summary with the defect reports of the adiabatic flow.
#[derive(Clone, Debug, Serialize)]
pub struct AdiabaticReport {
    pub summary: HierarchySummary,
    pub intertwining: Option<IntertwiningReport>,
    pub duhamel: Option<DuhamelReport>,
}

pub fn hierarchy(p: &Prepared) -> Result<Option<(AdiabaticHierarchy<f64>, AdiabaticReport)>> {
    let Some(a) = &p.config.adiabatic else {
        return Ok(None);
    };
    let dec = clusters(p)?;
    let depth = hierarchy_depth(p, a, &dec).map_err(|e| e.at("adiabatic"))?;
    let mut opts = HierarchyOptions::new(depth, sample_times(&p.config, a)).with_check_algebra(a.check_algebra);
    let [s, t] = p.config.propagation.t_span;
    if a.interpolation_nodes >= 2 {
        opts = opts.with_interpolation(s.min(t), s.max(t), a.interpolation_nodes);
    }
    let hier = build_hierarchy(&p.built.model, p.built.generator.clone(), dec, &opts).map_err(|e| e.at("adiabatic"))?;
    let (intertwining, duhamel) = if hier.table.is_some() {
        (
            Some(intertwining_defect(&hier, &p.config.propagation).map_err(|e| e.at("intertwining"))?),
            Some(duhamel_compare(&hier, &p.psi, &p.config.propagation).map_err(|e| e.at("duhamel"))?),
        )
    } else {
        (None, None)
    };
    let report = AdiabaticReport {
        summary: hier.summary(),
        intertwining,
        duhamel,
    };
    Ok(Some((hier, report)))
}

pub fn trajectory(p: &Prepared) -> Result<Trajectory<f64>> {
    propagate(&p.built.model, p.built.generator.as_ref(), &p.psi, &p.config.propagation, &p.config.sobolev_ks)
        .map_err(|e| e.at("propagate"))
}

/// Growth fit of one norm series with its bound and ε table.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    pub k: f64,
    pub fit: FitReport,
    pub epsilon_table: Vec<EpsilonRow>,
    pub conservation_drift: f64,
    pub drift_per_unit_time: f64,
}

/// Bound attached to the fit: explicit, else k/(2(1−τ)) for the polynomial
/// regime with τ given, else the log-power exponent from μ and ν.
fn fit_bound(p: &Prepared, k: f64) -> Option<f64> {
    let f = &p.config.fit;
    if f.bound.is_some() {
        return f.bound;
    }
    match f.regime {
        GrowthRegime::Polynomial => f.tau.map(|tau| polynomial_bound(k, tau)),
        GrowthRegime::Loglog => p
            .config
            .model
            .expected_mu()
            .filter(|&mu| mu > 0.0)
            .map(|mu| log_power_bound(k, mu, p.built.nu)),
        GrowthRegime::Exponential => None,
    }
}

pub fn growth(p: &Prepared, traj: &Trajectory<f64>) -> Result<GrowthReport> {
    let k = p.config.fit_k();
    let i = traj
        .k_index(k)
        .ok_or_else(|| Error::Config(format!("fit index {k} is not among sobolev_ks")).at("fit"))?;
    let series = traj.norm_series(i);
    let mut fit = fit_growth(&series, p.config.fit.regime, p.config.fit.t_min).map_err(|e| e.at("fit"))?;
    if let Some(b) = fit_bound(p, k) {
        fit = fit.with_bound(b);
    }
    let window: Vec<(f64, f64)> = series.into_iter().filter(|q| q.0 >= p.config.fit.t_min).collect();
    Ok(GrowthReport {
        k,
        fit,
        epsilon_table: compare_epsilon_bound(&window, p.config.propagation.t_span[0], &p.config.fit.epsilons),
        conservation_drift: traj.conservation_drift,
        drift_per_unit_time: traj.drift_per_unit_time(),
    })
}

pub fn floquet(p: &Prepared) -> Result<FloquetResult<f64>> {
    let period = p
        .config
        .floquet
        .as_ref()
        .map(|f| f.period)
        .ok_or_else(|| Error::Config("floquet section with a period is required".into()).at("floquet"))?;
    floquet_operator(p.built.generator.as_ref(), period, &p.config.propagation).map_err(|e| e.at("floquet"))
}

/// Paths written by [`run_experiment`].
#[derive(Clone, Debug, Default, Serialize)]
pub struct Artifacts {
    pub trajectory: Option<PathBuf>,
    pub fit: Option<PathBuf>,
    pub hierarchy: Option<PathBuf>,
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::from(e).at("output"))?;
    let path = dir.join(name);
    std::fs::write(&path, contents).map_err(|e| Error::from(e).at("output"))?;
    Ok(path)
}

pub fn write_json<S: Serialize>(dir: &Path, name: &str, value: &S) -> Result<PathBuf> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::from(e).at("output"))?;
    write(dir, name, &text)
}

pub fn write_text(dir: &Path, name: &str, text: &str) -> Result<PathBuf> {
    write(dir, name, text)
}

/// Full pipeline: hierarchy (if configured), propagation, growth fit.
pub fn run_experiment(config: &ExperimentConfig, out: &Path) -> Result<Artifacts> {
    let p = prepare(config)?;
    let names = &config.output;
    let mut art = Artifacts::default();
    if let Some((_, report)) = hierarchy(&p)? {
        art.hierarchy = Some(write_json(out, &names.hierarchy, &report)?);
    }
    let traj = trajectory(&p)?;
    art.trajectory = Some(write_text(out, &names.trajectory, &traj.to_csv().map_err(|e| e.at("output"))?)?);
    let report = growth(&p, &traj)?;
    art.fit = Some(write_json(out, &names.fit, &report)?);
    Ok(art)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FourierDrive, ModelKind, RealLineGrid};

    fn torus_config(amplitude: f64) -> ExperimentConfig {
        let drive = if amplitude == 0.0 {
            FourierDrive::default()
        } else {
            FourierDrive::single(1, amplitude, crate::sampler::Envelope::cosine(1.0, 1.0, 0.0))
        };
        ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::new(ModelKind::Torus { cutoff: 32, drive }),
            propagation: PropagatorConfig::new(0.05, 0.0, 20.0).with_record_every(4),
            sobolev_ks: vec![1.0, 2.0],
            initial: InitialState::Power { decay: 2.0 },
            adiabatic: None,
            fit: FitConfig {
                regime: GrowthRegime::Polynomial,
                t_min: 1.0,
                k: None,
                bound: None,
                tau: Some(0.0),
                epsilons: vec![0.25],
            },
            floquet: None,
            output: OutputConfig::default(),
            seed: 3,
        }
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = torus_config(0.2);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let mut v = serde_json::to_value(torus_config(0.2)).unwrap();
        v["surprise"] = serde_json::json!(1);
        let err = ExperimentConfig::from_json(&v.to_string()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let mut v = serde_json::to_value(torus_config(0.2)).unwrap();
        v["fit"]["window"] = serde_json::json!(1);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }

    #[test]
    fn invariants_are_enforced() {
        let mut cfg = torus_config(0.2);
        cfg.sobolev_ks = vec![-1.0];
        assert_eq!(cfg.validate().unwrap_err().exit_code(), 2);
        let mut cfg = torus_config(0.2);
        cfg.fit.t_min = 50.0;
        assert!(cfg.validate().is_err());
        let mut cfg = torus_config(0.2);
        cfg.schema_version = 2;
        assert!(cfg.validate().is_err());
        let mut cfg = torus_config(0.2);
        cfg.adiabatic = Some(AdiabaticConfig {
            depth: Some(1),
            epsilon: Some(0.5),
            j: None,
            detect: DetectOptions::default(),
            sample_times: vec![],
            interpolation_nodes: 8,
            check_algebra: false,
        });
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn unperturbed_torus_has_flat_norms() {
        let p = prepare(&torus_config(0.0)).unwrap();
        let traj = trajectory(&p).unwrap();
        let report = growth(&p, &traj).unwrap();
        assert!(report.fit.exponent.abs() < 0.01);
        assert_eq!(report.fit.verdict, Some(crate::fit::Verdict::Respected));
        assert!(report.epsilon_table[0].stabilized);
    }

    #[test]
    fn runs_are_bit_for_bit_reproducible() {
        let dir = std::env::temp_dir().join(format!("spectral-lab-repro-{}", std::process::id()));
        let cfg = torus_config(0.3);
        let a = run_experiment(&cfg, &dir.join("a")).unwrap();
        let b = run_experiment(&cfg, &dir.join("b")).unwrap();
        let read = |p: &Option<PathBuf>| std::fs::read(p.as_ref().unwrap()).unwrap();
        assert_eq!(read(&a.trajectory), read(&b.trajectory));
        let csv = String::from_utf8(read(&a.trajectory)).unwrap();
        assert!(csv.starts_with("t,norm_k1,norm_k2,conservation_drift\n"));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn model_failures_carry_the_stage_and_exit_code() {
        let mut cfg = torus_config(0.2);
        cfg.model = ModelSpec::new(ModelKind::Torus {
            cutoff: 8,
            drive: FourierDrive::default(),
        });
        let err = prepare(&cfg).err().unwrap();
        assert_eq!(err.exit_code(), 3);
        assert!(err.to_string().starts_with("model:"), "{err}");
    }

    #[test]
    fn dilation_rate_matches_the_closed_form() {
        let cfg = ExperimentConfig {
            schema_version: SCHEMA_VERSION,
            model: ModelSpec::new(ModelKind::DilationHarmonic {
                grid: RealLineGrid::new(512, 12.0),
                observe: 128,
                validate: 16,
            }),
            propagation: PropagatorConfig::new(0.01, 0.0, 1.5).with_record_every(5),
            sobolev_ks: vec![1.0],
            initial: InitialState::Gaussian { sigma: 1.0, center: 0.0 },
            adiabatic: None,
            fit: FitConfig {
                regime: GrowthRegime::Exponential,
                t_min: 0.1,
                k: None,
                bound: Some(1.0),
                tau: None,
                epsilons: vec![],
            },
            floquet: None,
            output: OutputConfig::default(),
            seed: 0,
        };
        let p = prepare(&cfg).unwrap();
        let traj = trajectory(&p).unwrap();
        let report = growth(&p, &traj).unwrap();
        // ‖ψ(t)‖_1² ≈ e^{2t}‖∂u‖² + e^{−2t}‖xu‖², so the fitted rate approaches 1
        // from below.
        assert!((report.fit.exponent - 1.0).abs() < 0.25, "{:?}", report.fit);
    }

    #[test]
    fn adiabatic_section_builds_a_hierarchy() {
        let mut cfg = torus_config(0.3);
        cfg.propagation = PropagatorConfig::new(0.05, 0.0, 1.0);
        cfg.fit.t_min = 0.0;
        cfg.adiabatic = Some(AdiabaticConfig {
            depth: None,
            epsilon: Some(2.0),
            j: Some(1),
            detect: DetectOptions::default(),
            sample_times: vec![0.0, 0.5],
            interpolation_nodes: 12,
            check_algebra: true,
        });
        let p = prepare(&cfg).unwrap();
        let (hier, report) = hierarchy(&p).unwrap().unwrap();
        assert_eq!(hier.depth, 0);
        assert!(report.intertwining.unwrap().defect < 1e-2);
        assert!(report.duhamel.unwrap().passed);
    }
}
