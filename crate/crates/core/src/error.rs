use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: String,
        got: String,
    },

    #[error("label map does not cover output {0:?}")]
    LabelCoverage(Vec<f64>),

    #[error("image condition violated for {which}: residual {residual:.3e}")]
    ImageConditionViolated { which: &'static str, residual: f64 },

    #[error("noise covariance R_r R_r^T is not diagonal (off-diagonal {0:.3e})")]
    UnsupportedCovariance(f64),

    #[error("kernel row lost mass: residual {0:.3e}")]
    NumericalConsistency(f64),

    #[error("delta = 0 requires R = P R_r exactly (gamma_2 infinite, mismatch {0:.3e})")]
    InfeasibleNoiseMismatch(f64),

    #[error("certificate invalid: {0}")]
    CertificateInvalid(String),

    #[error("input constraint row {row} has empty interior (b_tilde = {value:.4e})")]
    EmptyInterior { row: usize, value: f64 },

    #[error("singular matrix in {0}")]
    Singular(&'static str),

    #[error("no initial abstract state for x0 (distance {distance:.4e} > eps {eps:.4e})")]
    NoInitialAbstractState { distance: f64, eps: f64 },

    #[error("noise cannot be recovered: R lacks full column rank")]
    LiftingUnavailable,

    #[error("horizon exhausted at k = {0}")]
    HorizonExhausted(usize),

    #[error("horizon mismatch: policy covers {policy}, requested {requested}")]
    HorizonMismatch { policy: usize, requested: usize },

    #[error("malformed binary artifact: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err(context: &'static str, expected: impl ToString, got: impl ToString) -> Error {
    Error::Dimension {
        context,
        expected: expected.to_string(),
        got: got.to_string(),
    }
}
