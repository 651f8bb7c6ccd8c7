use crate::datamodel::SelectionFit;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("non-finite value at {0}")]
    NonFiniteValue(String),

    #[error("degenerate response: {0}")]
    DegenerateResponse(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("solver did not converge after {iterations} iterations")]
    NonConvergence {
        iterations: usize,
        last: Option<Box<SelectionFit>>,
    },

    #[error("residual scale underflow (interpolating fit)")]
    ZeroResidual,

    #[error("could not form cross-validation folds with both classes after {0} attempts")]
    FoldDegeneracy(usize),

    #[error("all counts are zero")]
    AllZeroData,

    #[error("mixture of order {k} is not identifiable with {trials} trials")]
    IdentifiabilityViolation { k: usize, trials: usize },

    #[error("empty input")]
    EmptyInput,

    #[error("zero variance")]
    ZeroVariance,

    #[error("predictor {0} has zero variance")]
    ZeroSdColumn(usize),

    #[error("optimizer did not converge: {0}")]
    FitNonConvergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Failures of a fitting or resampling procedure on valid input, as
    /// opposed to input or configuration problems.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonConvergence { .. }
                | Error::ZeroResidual
                | Error::FoldDegeneracy(_)
                | Error::AllZeroData
                | Error::ZeroVariance
                | Error::FitNonConvergence(_)
        )
    }
}
