use thiserror::Error;

/// Errors raised by the numerical engines.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("numerical non-convergence: {0}")]
    NumericalNonConvergence(String),
    #[error("truncation warning: mass outside the spatial window {estimate:.3e} exceeds {tol:.3e}")]
    TruncationWarning { estimate: f64, tol: f64 },
    #[error("degenerate scaling: mixture weight a must be positive")]
    DegenerateScaling,
    #[error("series divergence detected at order {order}: |p_n| grew for three consecutive orders")]
    DivergenceDetected { order: usize },
    #[error("eta = {0} is outside [0, 1/2)")]
    EtaOutOfRange(f64),
    #[error("control jump too large: F({right}-) - F({left}+) = {jump} exceeds theta = {theta}")]
    JumpTooLarge { left: f64, right: f64, jump: f64, theta: f64 },
    #[error("bound violation at sample {index}: ratio {ratio} outside [{lower}, {upper}]")]
    BoundViolation { index: usize, ratio: f64, lower: f64, upper: f64 },
}

pub type Result<T> = std::result::Result<T, Error>;
