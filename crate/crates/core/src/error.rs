use thiserror::Error;

/// Errors produced by the numerical engine.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("grid too small: {0}")]
    GridTooSmall(String),

    #[error("aliasing guard violated: |dt| * max kinetic eigenvalue = {value:.4} >= pi")]
    AliasingGuard { value: f64 },

    #[error("non-finite amplitudes detected during {stage}")]
    NonFinite { stage: String },

    #[error("norm drift {drift:.3e} exceeds tolerance during {stage}")]
    NormDrift { stage: String, drift: f64 },

    #[error("unknown chain variant {variant:?} for n = {n}")]
    UnknownVariant { variant: String, n: usize },

    #[error("snapshot mismatch: {0}")]
    SnapshotMismatch(String),

    #[error("point {point:?} outside the grid")]
    OutOfGrid { point: Vec<f64> },

    #[error("invalid map region carries {fraction:.4} of total mass (limit {limit})")]
    InvalidMapMass { fraction: f64, limit: f64 },

    #[error("ensemble shape mismatch: {0}")]
    EnsembleMismatch(String),

    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, CoreError>;
