use thiserror::Error;

/// Errors raised by the toolkit.
///
/// Variants are grouped by how a caller is expected to react: validation
/// problems (bad input), numerical failures (solver trouble), and
/// certification failures (the computation ran but a claimed property did
/// not hold).
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate lattice: basis determinant {det:e}")]
    DegenerateLattice { det: f64 },

    #[error("invalid argument `{name}`: {reason}")]
    InvalidArgument { name: &'static str, reason: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("empty level set: tau = {tau} is below min A0 = {min}")]
    EmptyLevelSet { tau: f64, min: f64 },

    #[error("perturbation is not Hermitian-symmetric at theta = {theta:?}")]
    NonHermitianPerturbation { theta: Vec<i64> },

    #[error("parse error in {what}: {reason}")]
    Parse { what: &'static str, reason: String },

    #[error("manifest validation failed at `{field}`: {reason}")]
    Manifest { field: String, reason: String },

    #[error("plane-wave basis is empty for the requested window")]
    EmptyBasis,

    #[error("eigensolver failed: {0}")]
    Eigensolver(String),

    #[error("root finder did not converge: {0}")]
    NoConvergence(String),

    #[error("graph coordinate {k} is ill-conditioned: |dA0/dxi_k| = {value:e}")]
    GraphCoordinate { k: usize, value: f64 },

    #[error("gauge divergence: residual grew from {before:e} to {after:e} in round {round}")]
    GaugeDivergence { round: usize, before: f64, after: f64 },

    #[error("gauge inconsistency: targeted pair ({row}, {col}) has denominator {denominator:e}")]
    GaugeInconsistency { row: usize, col: usize, denominator: f64 },

    #[error("off-block residual {value:e} at ({row}, {col}) exceeds tol_block {tol:e}")]
    BlockResidual { row: usize, col: usize, value: f64, tol: f64 },

    #[error("cluster count mismatch near {center}: full {full}, blocks {blocks}")]
    ClusterMismatch { center: f64, full: usize, blocks: usize },

    #[error("upsilon formula unavailable: {0}")]
    UpsilonFormula(String),

    #[error("xi* selection budget exhausted after {draws} draws (accepted nonresonant {nonresonant}, accepted interior {interior})")]
    SelectionBudget { draws: usize, nonresonant: usize, interior: usize },

    #[error("tangent frame: {0}")]
    TangentFrame(String),

    #[error("curve bracket failure at t = {t}")]
    CurveRange { t: f64 },

    #[error("step {step} failed: no admissible parameter left (R_hat = {r_hat})")]
    StepFailure { step: usize, r_hat: f64 },

    #[error("certification failed: {0}")]
    Certification(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by front ends to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Certification,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        use Error::*;
        match self {
            DegenerateLattice { .. }
            | InvalidArgument { .. }
            | DimensionMismatch { .. }
            | EmptyLevelSet { .. }
            | NonHermitianPerturbation { .. }
            | Parse { .. }
            | Manifest { .. }
            | UpsilonFormula(_)
            | Io(_)
            | Json(_) => ErrorClass::Validation,
            Certification(_) | ClusterMismatch { .. } | StepFailure { .. } => {
                ErrorClass::Certification
            }
            _ => ErrorClass::Numerical,
        }
    }

    pub(crate) fn arg(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument { name, reason: reason.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
