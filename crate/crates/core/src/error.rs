use thiserror::Error;

/// Errors raised anywhere in the stability pipeline.
#[derive(Debug, Error)]
pub enum KreinError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("Newton iteration did not converge after {iterations} steps (residual {residual:.3e})")]
    NonConvergence { iterations: usize, residual: f64 },

    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),

    #[error("branch terminated after mu = {last_mu}: {reason}")]
    BranchTermination { last_mu: f64, reason: String },

    #[error("kernel candidate `{candidate}` has ambiguous residual {residual:.3e}")]
    RankAmbiguity { candidate: String, residual: f64 },

    #[error("D matrix is singular or ill-posed: {0}")]
    SingularD(String),

    #[error("constrained operator S^-1 is singular (smallest |eigenvalue| = {smallest:.3e})")]
    SingularPencil { smallest: f64 },

    #[error("eigensolver failure: {0}")]
    EigenSolver(String),

    #[error("inner resolvent solve is singular at z = {z}")]
    InnerSolveSingular { z: String },

    #[error("unresolved: {0}")]
    Unresolved(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<KreinError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl KreinError {
    /// Attach the pipeline stage that produced the error.
    pub fn at(self, stage: &'static str) -> Self {
        KreinError::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error, with stage attribution stripped.
    pub fn root(&self) -> &KreinError {
        match self {
            KreinError::Stage { source, .. } => source.root(),
            other => other,
        }
    }
}

pub type Result<T, E = KreinError> = std::result::Result<T, E>;

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
