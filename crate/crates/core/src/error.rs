use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected} values, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("mesh parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("inverted element {element}: measure {measure} is not positive")]
    InvertedElement { element: usize, measure: f64 },

    #[error("non-manifold face {face:?}: shared by {count} elements")]
    NonManifold { face: Vec<usize>, count: usize },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("hypothesis violated: {clause}")]
    HypothesisViolation { clause: String },

    #[error("weight is not positive at sample point ({x}, {y}); A_q estimate requires a > 0")]
    WeightDegenerate { x: f64, y: f64 },

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("Hessian requires eps > 0 when p < 2 (p = {p})")]
    RegularizationRequired { p: f64 },

    #[error("oracle limited to 12 nodes, mesh has {nodes}")]
    OracleScale { nodes: usize },

    #[error("boundary datum violates the compatibility condition: integral of g = {residual:e}")]
    Compatibility { residual: f64 },

    #[error("operation not supported in dimension {dim}")]
    UnsupportedDimension { dim: usize },

    #[error("continuation aborted at step {step} (p = {p}): inner solve did not converge")]
    ContinuationAborted { step: usize, p: f64 },
}

impl Error {
    /// Short machine-readable tag, used in error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::Dimension { .. } => "dimension",
            Error::Parse { .. } => "parse",
            Error::InvertedElement { .. } => "inverted-element",
            Error::NonManifold { .. } => "non-manifold",
            Error::Io { .. } => "io",
            Error::HypothesisViolation { .. } => "hypothesis",
            Error::WeightDegenerate { .. } => "weight-degenerate",
            Error::Numeric(_) => "numeric",
            Error::RegularizationRequired { .. } => "regularization-required",
            Error::OracleScale { .. } => "oracle-scale",
            Error::Compatibility { .. } => "compatibility",
            Error::UnsupportedDimension { .. } => "unsupported-dimension",
            Error::ContinuationAborted { .. } => "non-convergence",
        }
    }
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
