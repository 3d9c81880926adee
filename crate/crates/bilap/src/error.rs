use thiserror::Error;

/// Errors surfaced by the numerical kernels.
#[derive(Debug, Error)]
pub enum Error {
    #[error("spherical grid exact to degree {exact} is too coarse for truncation L = {requested}")]
    GridTooCoarse { exact: usize, requested: usize },

    #[error("radial grid with {nodes} nodes cannot support the requested operator")]
    RadialGridTooSmall { nodes: usize },

    #[error("boundary data violates constraint {constraint} by {magnitude:.3e} (tolerance {tolerance:.3e})")]
    ConstraintViolation {
        constraint: &'static str,
        magnitude: f64,
        tolerance: f64,
    },

    #[error("boundary data carries non-zero low modes (l = 0 or l = 1) where only perpendicular modes are allowed")]
    NonZeroLowModes,

    #[error("point lies on the domain boundary or outside the domain")]
    PointNotInterior,

    #[error("source and evaluation points coincide")]
    CoincidentPoints,

    #[error("domain variant does not support this operation: {0}")]
    UnsupportedDomain(&'static str),

    #[error("Richardson extrapolation for the Robin value did not converge (spread {spread:.3e}); Green evaluator inconsistent")]
    RobinExtrapolation { spread: f64 },

    #[error("potential vanishes at the requested point")]
    PotentialZero,

    #[error("displacement {norm:.3e} exceeds the diffeomorphism bound r0/4 = {bound:.3e}")]
    DisplacementTooLarge { norm: f64, bound: f64 },

    #[error("Newton iteration did not reach tolerance in {0} iterations")]
    MaxIterations(usize),

    #[error("Hessian is singular (minimum singular value {min_sv:.3e} < {threshold:.3e}); critical point is degenerate")]
    SingularHessian { min_sv: f64, threshold: f64 },

    #[error("iterate left the computational domain")]
    LeftDomain,

    #[error("{stage} iteration is not contracting (factor {factor:.3} for three consecutive sweeps)")]
    NonContraction { stage: &'static str, factor: f64 },

    #[error("interior and exterior states are built on incompatible scale parameters")]
    IncompatibleScales,

    #[error("scale parameter eps = {eps} leaves an empty parameter box (requires 0 < eps < {limit:.3e})")]
    EmptyParameterBox { eps: f64, limit: f64 },

    #[error("match state left the kappa-box: component {component} at {value:.3e} exceeds bound {bound:.3e}")]
    KappaBoxViolation {
        component: &'static str,
        value: f64,
        bound: f64,
    },

    #[error("outer matching iteration diverged after {sweeps} sweeps (mismatch {mismatch:.3e})")]
    OuterDivergence { sweeps: usize, mismatch: f64 },

    #[error("low-mode Jacobian is singular; the nondegeneracy assumption fails")]
    SingularLowModeJacobian,

    #[error("quadrature failed to reach the requested tolerance (estimate {estimate:.3e})")]
    QuadratureFailure { estimate: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("tabulated Green data: {0}")]
    TabulatedData(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
