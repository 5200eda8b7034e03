use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("negative Sobolev index {0} (dual norms are not supported)")]
    NegativeSobolevIndex(f64),
    #[error("operator is not hermitian in {context}: relative defect {defect:e}")]
    NotHermitian { context: String, defect: f64 },
    #[error("derivative unavailable: order {requested} requested, sampler provides {max_order}")]
    DerivativeUnavailable { requested: usize, max_order: usize },
    #[error("insufficient cluster statistics: {found} clusters, need {needed}")]
    InsufficientClusters { found: usize, needed: usize },
    #[error("perturbation order too high: nu = {nu} must be below mu/(mu+1) = {bound}")]
    PerturbationOrderTooHigh { nu: f64, bound: f64 },
    #[error("gap condition violated after enlargement between clusters {left} and {right}")]
    ClusterOverlap { left: usize, right: usize },
    #[error("time horizon below analytic regime: log<T> = {log_bracket} gives M + 1 < 1")]
    TimeHorizonTooSmall { log_bracket: f64 },
    #[error("state blow-up at t = {t}: coefficient magnitude {magnitude:e} (truncation too small?)")]
    StateBlowUp { t: f64, magnitude: f64 },
    #[error("periodicity violated at t = {t}: relative defect {defect:e}")]
    PeriodicityViolated { t: f64, defect: f64 },
    #[error(
        "spectrum escaped clusters - increase J (level {level}, t = {t}, eigenvalue {eigenvalue}, nearest cluster {nearest})"
    )]
    ClusterEscape { level: usize, t: f64, eigenvalue: f64, nearest: usize },
    #[error("projector family inconsistent: counter-term hermiticity defect {defect:e}")]
    ProjectorInconsistent { defect: f64 },
    #[error("shift c0 too small: H_ad + c0 has eigenvalue {min_eigenvalue}")]
    ShiftTooSmall { min_eigenvalue: f64 },
    #[error("perturbation step too large: 1 - L has smallest singular value {smallest:e}")]
    SingularPerturbationStep { smallest: f64 },
    #[error("model validation failed: {0}")]
    ModelValidation(String),
    #[error("grid under-resolved: {0}")]
    GridUnderResolved(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{stage}: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Config(_) | Error::Json(_) => 2,
            Error::ModelValidation(_) | Error::GridUnderResolved(_) => 3,
            Error::ClusterEscape { .. } => 4,
            Error::StateBlowUp { .. } => 5,
            _ => 1,
        }
    }

    /// Tags the error with the pipeline stage it came from.
    pub fn at(self, stage: &str) -> Self {
        match self {
            Error::Stage { .. } => self,
            e => Error::Stage {
                stage: stage.to_string(),
                source: Box::new(e),
            },
        }
    }

    /// The error without its stage tag.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}
