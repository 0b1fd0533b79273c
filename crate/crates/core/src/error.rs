use thiserror::Error;

/// Validation failures for plant, controller and system-file input.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{field}: expected {expected}, found {found}")]
    Dimension {
        field: &'static str,
        expected: String,
        found: String,
    },
    #[error("{field}: non-finite entry at ({row}, {col})")]
    NonFinite {
        field: &'static str,
        row: usize,
        col: usize,
    },
    #[error("Q_p is not symmetric (max asymmetry {asymmetry:.3e} > 1e-12)")]
    Asymmetric { asymmetry: f64 },
    #[error("{field}: dimension must be at least 1")]
    Empty { field: &'static str },
    #[error("system file: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericError {
    #[error("eigensolver did not converge within {iterations} iterations (condition estimate {condition:.3e})")]
    NoConvergence { iterations: usize, condition: f64 },
    #[error("Lyapunov solve failed: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    LyapunovResidual { residual: f64, tolerance: f64 },
    #[error("Lyapunov solution is not positive definite (min eigenvalue {min_eigenvalue:.3e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },
    #[error("singular linear system in {context}")]
    Singular { context: &'static str },
    #[error("contract violation: {0}")]
    Contract(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("assumption violated: {0}")]
    Assumption(String),
    #[error("projection vector lies in forbidden subspace from {source_tag} (margin {margin:.3e})")]
    ForbiddenProjection { source_tag: String, margin: f64 },
    #[error("projection vector has length {found}, expected {expected}")]
    ProjectionLength { expected: usize, found: usize },
    #[error("induced pair is unobservable for the chosen projection (margin {margin:.3e})")]
    Unobservable { margin: f64 },
    #[error("Q_p annihilates the projection vector; gamma bound is undefined")]
    AnnihilatedProjection,
    #[error("no sampled candidate yields an observable induced pair ({candidates} tried)")]
    NoAdmissibleCandidate { candidates: usize },
    #[error("gamma fraction {0} outside (0, 1)")]
    GammaFraction(f64),
    #[error("internal consistency check failed: {0}")]
    Consistency(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObserverError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("desired poles invalid: {0}")]
    DesiredPoles(String),
    #[error("placed spectrum misses target by {mismatch:.3e} (observability condition {condition:.3e})")]
    Placement { mismatch: f64, condition: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoaError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("{which} is not Hurwitz (spectral abscissa {abscissa:.3e})")]
    NotHurwitz { which: &'static str, abscissa: f64 },
    #[error("delta {delta} outside admissible interval (0, {c2})")]
    Delta { delta: f64, c2: f64 },
    #[error("region estimate is infeasible (c2 = {c2:.3e} <= 0)")]
    Infeasible { c2: f64 },
    #[error("cannot sample from {0}")]
    Sampler(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state norm exceeded {threshold:.1e} at t = {time}")]
    Divergence { time: f64, threshold: f64 },
    #[error("invalid simulation options: {0}")]
    Options(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("degenerate decay fit: {0}")]
    DegenerateFit(String),
}

/// Umbrella error for the synthesis pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Observer(#[from] ObserverError),
    #[error(transparent)]
    Roa(#[from] RoaError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
