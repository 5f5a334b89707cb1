use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("kinematic singularity (weighted Jacobian eigenvalue {measure:.3e})")]
    Singular { measure: f64 },

    #[error("invalid robot model: {0}")]
    InvalidModel(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite state encountered: {0}")]
    NonFinite(String),

    #[error("tracking diverged at sample {index}: task error {error:.3e} m")]
    TrackingDivergence { index: usize, error: f64 },

    #[error("inverse kinematics did not converge (residual {residual:.3e} m)")]
    IkFailed { residual: f64 },

    #[error("group table is invalid: {0}")]
    InvalidGroup(String),

    #[error("chain mismatch: {0}")]
    ChainMismatch(String),

    #[error("actions do not commute (max violation {violation:.3e})")]
    NonCommuting { violation: f64 },

    #[error("twist is not a homomorphism into Aut(G2): {0}")]
    InvalidTwist(String),

    #[error("demonstration {index} is not horizontal (vertical speed {vertical:.3e})")]
    NotHorizontal { index: usize, vertical: f64 },

    #[error("unknown augmentation preset `{0}`")]
    UnknownPreset(String),

    #[error("degenerate features: {0}")]
    DegenerateFeatures(String),

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}
