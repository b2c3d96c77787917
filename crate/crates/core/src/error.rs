use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("factorization failed: {0}")]
    Factorization(String),
    #[error("decomposition did not converge: {0}")]
    NoConvergence(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("n_theta = {0} is below 3; the polygon is degenerate")]
    DegeneratePolygon(usize),
    #[error("n_r must be at least 1")]
    NoRings,
    #[error("triangle {index} has zero area")]
    ZeroAreaTriangle { index: usize },
    #[error("triangle {index} references node {node} outside the mesh")]
    BadIndex { index: usize, node: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("resolvent solve is singular at lambda = {re} + {im}i (eigenvalue hit)")]
    EigenvalueHit { re: f64, im: f64 },
    #[error("only {0} grid points fall inside the fit window; at least 4 are needed")]
    WindowTooSmall(usize),
    #[error("state dimension {0} exceeds the dense limit {1}")]
    TooLargeForDense(usize, usize),
    #[error("resolvent quadrature did not converge: relative change {0:e} after the finest panel")]
    QuadratureNoConvergence(f64),
    #[error("iterative norm estimate did not reach tolerance after {0} steps")]
    IterationLimit(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NonlinearityError {
    #[error("table lookup at s = {s} outside [{lo}, {hi}]")]
    Extrapolation { s: f64, lo: f64, hi: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid nonlinearity: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IntegratorError {
    #[error("invalid stepper config: {0}")]
    InvalidConfig(String),
    #[error("Newton failed at t = {t} after {halvings} step halvings (last update {update:e}, dt = {dt})")]
    NewtonFailure {
        t: f64,
        dt: f64,
        halvings: usize,
        update: f64,
    },
    #[error(
        "Picard iteration did not converge in {0} sweeps (last change {1:e}); subdivide [0, T]"
    )]
    PicardNoConvergence(usize, f64),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error("no entry into the absorbing ball within the horizon; largest observed norm {0}")]
    NoEntry(f64),
    #[error("sandwich inequality still violated after {0} halvings of epsilon")]
    SandwichViolated(usize),
    #[error(transparent)]
    Integrator(#[from] IntegratorError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Nonlinearity(#[from] NonlinearityError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
