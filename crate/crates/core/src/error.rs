use thiserror::Error;

/// Errors raised by the estimator and map operations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("propagation gap: dt = {dt} s outside (0, {max}) s")]
    PropagationGap { dt: f64, max: f64 },
    #[error("undistortion gap: {gap} s without IMU data near t = {at}")]
    UndistortionGap { gap: f64, at: f64 },
    #[error("IMU stream does not cover [{start}, {end}]")]
    ImuCoverage { start: f64, end: f64 },
    #[error("patch out of bounds at pixel ({u:.2}, {v:.2})")]
    PatchOutOfBounds { u: f64, v: f64 },
    #[error("insufficient points: {have} < {need}")]
    InsufficientPoints { have: usize, need: usize },
}

pub type Result<T> = std::result::Result<T, Error>;
