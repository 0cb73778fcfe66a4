use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] gamesynth::Error),

    #[error("cannot parse {path}: {msg}")]
    Parse { path: PathBuf, msg: String },

    #[error("artifact mismatch: {0}")]
    Mismatch(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use gamesynth::Error as E;
        match self {
            CliError::Infeasible(_) => 2,
            CliError::Mismatch(_) => 3,
            CliError::Parse { .. } => 4,
            CliError::Core(e) => match e {
                E::InfeasibleNoiseMismatch(_)
                | E::EmptyInterior { .. }
                | E::CertificateInvalid(_)
                | E::NoInitialAbstractState { .. }
                | E::ImageConditionViolated { .. } => 2,
                E::Format(_) | E::HorizonMismatch { .. } => 3,
                E::Config(_) | E::Json(_) | E::Dimension { .. } | E::LabelCoverage(_) => 4,
                _ => 1,
            },
            CliError::Io { .. } | CliError::Csv(_) => 1,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
