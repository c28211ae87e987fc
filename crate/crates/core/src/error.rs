use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = DgpError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum DgpError {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("keypoint schema error: {0}")]
    Schema(String),

    #[error("insufficient samples: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("degenerate basis: sample covariance is zero")]
    DegenerateBasis,

    #[error("singular covariance: strength {index} is zero")]
    SingularCovariance { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0:?} vs {1:?}")]
    ShapeMismatch((usize, usize), (usize, usize)),

    #[error("tail bound undefined: psi^2 = {psi_sq} must exceed n = {n}")]
    BoundUndefined { n: usize, psi_sq: f64 },

    #[error("initial point violates the constraint by {violation:e}")]
    Infeasible { violation: f64 },

    #[error("non-finite {what} at iteration {iter}")]
    Numerical { iter: usize, what: String },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("solver failure: {0}")]
    Solver(String),

    #[error("missing required keypoint {index} ({name})")]
    MissingKeypoint { index: usize, name: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<DgpError>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl DgpError {
    /// True for errors raised by numerical breakdown rather than bad input.
    pub fn is_numerical(&self) -> bool {
        match self {
            DgpError::DegenerateBasis
            | DgpError::SingularCovariance { .. }
            | DgpError::Numerical { .. }
            | DgpError::Solver(_) => true,
            DgpError::Stage { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> DgpError {
        DgpError::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
