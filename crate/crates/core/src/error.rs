use std::fmt;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Compact display of a parameter vector for diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamDisplay(pub Vec<f64>);

impl fmt::Display for ParamDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, v) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

impl From<&[f64]> for ParamDisplay {
    fn from(p: &[f64]) -> Self {
        ParamDisplay(p.to_vec())
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter box: {0}")]
    InvalidBox(String),

    #[error("parameter {param} lies outside the parameter box")]
    OutOfBox { param: ParamDisplay },

    #[error("parameter has {got} components, expected {expected}")]
    ParamDims { expected: usize, got: usize },

    #[error("macro-triangle {triangle} is degenerate at p = {param} (|det C| = {det:e})")]
    DegenerateTriangle {
        triangle: usize,
        param: ParamDisplay,
        det: f64,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("anti-periodic pairing failed: {0}")]
    UnpairedNodes(String),

    #[error("B-H table rejected: {0}")]
    InvalidTable(String),

    #[error("reluctivity curve fails validation at s = {s}: {reason}")]
    CurveValidation { s: f64, reason: String },

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("Newton iteration did not converge after {iterations} iterations (residual history {history:?})")]
    NewtonDiverged {
        iterations: usize,
        history: Vec<f64>,
        last_iterate: Vec<f64>,
    },

    #[error("reduced model is empty (N = 0)")]
    EmptyModel,

    #[error("residual Gram matrix inconsistent: squared dual norm {value:e} at scale {scale:e}")]
    GramInconsistent { value: f64, scale: f64 },

    #[error("model container version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("corrupt container: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
