//! Error types shared across the crate.

use thiserror::Error;

/// Errors raised while parsing an expression source string.
///
/// `position` is the 1-based character position where the problem was
/// detected.
#[derive(Clone, Debug, Error, PartialEq)]
#[error("syntax error at position {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(position: usize, message: impl Into<String>) -> Self {
        Self {
            position,
            message: message.into(),
        }
    }
}

/// Errors raised while evaluating an expression.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum EvalError {
    /// The operation left the real domain (ln of a non-positive value,
    /// division by zero, non-finite intermediate, ...).
    #[error("domain error: {0}")]
    Domain(String),
    /// The expression references a variable the bindings do not provide.
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    /// The state vector in the bindings has the wrong length.
    #[error("state vector has length {got}, expression expects {expected}")]
    StateLength { expected: usize, got: usize },
}

/// Crate-wide error type for the synthesis / control / simulation pipeline.
#[derive(Clone, Debug, Error, PartialEq)]
pub enum Error {
    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error(transparent)]
    Eval(#[from] EvalError),

    /// Inconsistent dimensions between operands.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// Invalid specification or configuration input.
    #[error("configuration error: {0}")]
    Config(String),

    /// A linear solve hit a pivot below the singularity threshold.
    #[error("singular matrix: {0}")]
    SingularMatrix(String),

    /// q00 evaluated to zero; the diffusion scale must never vanish.
    #[error("q00 vanishes at t={t}, x={x:?}")]
    VanishingQ00 { t: f64, x: Vec<f64> },

    /// The manifold gradient vanished, so every construction degenerates.
    #[error("gradient of u vanishes at t={t}, x={x:?}")]
    DegenerateGradient { t: f64, x: Vec<f64> },

    /// The basis cofactor of the drift determinant is (numerically) zero.
    #[error("degenerate drift determinant at t={t}, x={x:?}: basis cofactor {cofactor:e}")]
    DegenerateAdjunct { t: f64, x: Vec<f64>, cofactor: f64 },

    /// Auxiliary function families failed the independence check.
    #[error("dependent auxiliary functions: {0}")]
    DependentFunctions(String),

    /// The jump ODE integrator could not meet its tolerance.
    #[error("jump ODE step underflow at gamma={reached} (target {target})")]
    OdeStepUnderflow { reached: f64, target: f64 },

    /// A square control channel matrix is singular.
    #[error("singular control channel at t={t}, x={x:?}")]
    SingularChannel { t: f64, x: Vec<f64> },

    /// An underdetermined control channel cannot reach the target drift.
    #[error("infeasible control at t={t}, x={x:?}: residual {residual:e}")]
    InfeasibleControl { t: f64, x: Vec<f64>, residual: f64 },
}

impl Error {
    /// True for errors caused by bad user input (config files, expression
    /// sources, malformed dimensions) as opposed to runtime/feasibility
    /// failures. The CLI maps these to exit code 2.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Parse(_) | Error::Dimension(_) | Error::Config(_)
        )
    }
}
