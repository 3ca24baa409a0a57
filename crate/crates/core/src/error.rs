use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    Parameter { name: String, reason: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not positive semidefinite (minimum eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("scheme diverged at step {step}")]
    Divergence { step: u64 },

    #[error("points lie on the diagonal: |x-y|_S = {distance:e} < {threshold:e}")]
    Diagonal { distance: f64, threshold: f64 },

    #[error("quadrature failed: {0}")]
    Quadrature(String),

    #[error("derivative evaluation failed: {0}")]
    Derivative(String),

    #[error("degenerate coupling: {0}")]
    DegenerateCoupling(String),

    #[error("Poisson residual {max_residual:e} exceeds {tolerance:e} (worst at x = {worst_x})")]
    PoissonResidual {
        max_residual: f64,
        tolerance: f64,
        worst_x: f64,
        profile: Vec<(f64, f64)>,
    },

    #[error("LP solver: {0}")]
    Solver(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("unavailable: {0}")]
    Unavailable(String),

    #[error("config error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Config { line: Option<usize>, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn param(name: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name: name.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag, used by the CLI error JSON and the C ABI.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parameter { .. } => "parameter",
            Error::Dimension(_) => "dimension",
            Error::NotPsd { .. } => "not_psd",
            Error::Divergence { .. } => "divergence",
            Error::Diagonal { .. } => "diagonal",
            Error::Quadrature(_) => "quadrature",
            Error::Derivative(_) => "derivative",
            Error::DegenerateCoupling(_) => "degenerate_coupling",
            Error::PoissonResidual { .. } => "poisson_residual",
            Error::Solver(_) => "solver",
            Error::Precondition(_) => "precondition",
            Error::Unavailable(_) => "unavailable",
            Error::Config { .. } => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
