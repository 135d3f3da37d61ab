use thiserror::Error;

/// Errors produced by chain construction, sampling, and the estimators.
#[derive(Debug, Error)]
pub enum Error {
    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to zero")]
    ZeroRow { row: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionError { expected: usize, found: usize },

    #[error("time {t} exceeds chain horizon {horizon}")]
    OutOfHorizon { t: usize, horizon: usize },

    #[error("parameter {name} = {value} out of range ({expected})")]
    ParamOutOfRange {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("chain generation failed at index {index} after {attempts} rejections")]
    GenerationFailed { index: usize, attempts: usize },

    #[error("no rank-one anchor within horizon (t0 = {t0}, scanned to {t_max}, final spread {spread})")]
    NotErgodicWithinHorizon { t0: usize, t_max: usize, spread: f64 },

    #[error("initial values and prejudices overlap; absorption tracking needs disjoint sets")]
    OverlapError,

    #[error("no trial reached agreement before the horizon ({failed} of {total})")]
    NonAgreeingTrial { failed: u64, total: u64 },

    #[error("linear system is singular")]
    SingularSystem,

    #[error("bad agent subset: {0}")]
    BadSubset(&'static str),

    #[error("enumeration too large: n = {n}, delta = {delta} (need n <= 4, delta <= 4)")]
    TooLargeToEnumerate { n: usize, delta: usize },

    #[error("unrecognized chain descriptor: {0}")]
    BadDescriptor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
