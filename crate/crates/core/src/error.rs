use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NlraError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: expected {expected}, found {found}")]
    ShapeMismatch { expected: String, found: String },

    #[error("{op} did not converge on a {rows}x{cols} matrix")]
    NoConvergence {
        op: &'static str,
        rows: usize,
        cols: usize,
    },

    #[error("activation `{name}` is not easily invertible (c1 = {c1})")]
    UnsupportedActivation { name: String, c1: f64 },

    #[error("enumerating C({d}, {r}) = {count} subsets exceeds the budget of {cap}")]
    CombinatorialBudget {
        d: usize,
        r: usize,
        count: u128,
        cap: u128,
    },

    #[error("optimizer diverged (evaluation risk trace: {trace:?})")]
    Divergence { trace: Vec<f64> },

    #[error("eigen-gap {gap:e} is too small for a well-defined rank-{r} subspace")]
    DegenerateGap { r: usize, gap: f64 },
}

pub type Result<T> = std::result::Result<T, NlraError>;

pub(crate) fn invalid(msg: impl Into<String>) -> NlraError {
    NlraError::InvalidInput(msg.into())
}
