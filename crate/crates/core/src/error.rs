use thiserror::Error;

use crate::model::Regime;

/// Errors produced anywhere in the library.
///
/// Variants fall into three families that the CLI maps to exit codes:
/// input/validation problems, numerical solver failures, and calls made
/// on a model whose drift regime does not support the request.
#[derive(Debug, Error)]
pub enum FluidError {
    #[error("cannot parse model document: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("model needs at least 2 phases, got {0}")]
    TooFewPhases(usize),

    #[error("generator row {row} sums to {sum:e}, expected 0")]
    RowSum { row: usize, sum: f64 },

    #[error("generator entry ({row}, {col}) = {value} is a negative off-diagonal rate")]
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },

    #[error("generator entry ({row}, {col}) is not finite")]
    NonFinite { row: usize, col: usize },

    #[error("reducible generator: phase {0} cannot reach every other phase")]
    Reducible(usize),

    #[error("one-directional model: Ψ undefined ({0})")]
    OneDirectional(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("singular Sylvester pencil: residual {residual:e} exceeds {bound:e}")]
    SingularPencil { residual: f64, bound: f64 },

    #[error("matrix has rank deficiency greater than one (second smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("singular linear system: {0}")]
    Singular(String),

    #[error(
        "{algorithm} iteration did not converge in {iterations} steps (last step {last_step:e}, residual {residual:e})"
    )]
    NotConverged { algorithm: &'static str, iterations: usize, last_step: f64, residual: f64 },

    #[error("functional iteration lost monotonicity at step {iteration} (decrease {decrease:e})")]
    Monotonicity { iteration: usize, decrease: f64 },

    #[error("numerical fault: {0}")]
    Numerical(String),

    #[error("operation requires a {required} model but the model is {actual:?}")]
    Regime { required: &'static str, actual: Regime },
}

impl FluidError {
    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            FluidError::Parse(_)
            | FluidError::Io(_)
            | FluidError::DimensionMismatch(_)
            | FluidError::TooFewPhases(_)
            | FluidError::RowSum { .. }
            | FluidError::NegativeOffDiagonal { .. }
            | FluidError::NonFinite { .. }
            | FluidError::Reducible(_)
            | FluidError::OneDirectional(_)
            | FluidError::InvalidArgument(_) => 1,
            FluidError::SingularPencil { .. }
            | FluidError::RankDeficient(_)
            | FluidError::Singular(_)
            | FluidError::NotConverged { .. }
            | FluidError::Monotonicity { .. }
            | FluidError::Numerical(_) => 2,
            FluidError::Regime { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, FluidError>;
