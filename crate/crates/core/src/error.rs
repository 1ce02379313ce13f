//! Crate-wide error type.
//!
//! Every operation validates its theorem preconditions at the boundary and
//! refuses to compute outside them; preconditions are never silently clamped.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("sample is empty")]
    EmptySample,

    #[error("sample length {got} does not match function arity {arity}")]
    ArityMismatch { arity: usize, got: usize },

    #[error("function value is not finite while resampling coordinate {index}")]
    NonFiniteValue { index: usize },

    #[error("inner_reps must be at least 1")]
    ZeroInnerReps,

    #[error("x must be at least 2 for this bound, got {x}")]
    XBelowTwo { x: f64 },

    #[error("x must be positive, got {x}")]
    XNotPositive { x: f64 },

    #[error("x must be nonnegative, got {x}")]
    XNegative { x: f64 },

    #[error("y must be positive, got {y}")]
    YNotPositive { y: f64 },

    #[error("{name} must be nonnegative, got {value}")]
    NegativeArgument { name: &'static str, value: f64 },

    #[error("grid of candidate values is empty")]
    EmptyGrid,

    #[error("no samples provided")]
    EmptySamples,

    #[error("exp overflow at lambda = {lambda}, sample index {index}")]
    MgfOverflow { lambda: f64, index: usize },

    #[error("exp overflow at trial index {index}")]
    MixtureOverflow { index: usize },

    #[error("weights must be nonnegative, sum to 1 within {tolerance} (sum = {sum})")]
    InvalidDistribution { sum: f64, tolerance: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("absolute continuity violated at index {index}: mass {p} on an atom with zero reference mass")]
    AbsoluteContinuity { index: usize, p: f64 },

    #[error(
        "behavior policy assigns zero probability to logged action {action} at position {index}"
    )]
    ZeroBehaviorProbability { index: usize, action: usize },

    #[error("action {action} at position {index} is outside [0, {num_actions})")]
    ActionOutOfRange {
        index: usize,
        action: usize,
        num_actions: usize,
    },

    #[error("reward {value} at position {index} is outside [0, 1]")]
    RewardOutOfRange { index: usize, value: f64 },

    #[error("degenerate sample: importance weights sum to zero")]
    DegenerateWeightSum,

    #[error("degenerate weight sum for policy {policy} with positive posterior mass")]
    DegeneratePolicyWeightSum { policy: usize },

    #[error("loss {value} at row {row}, column {column} is outside the declared range")]
    LossOutOfRange {
        row: usize,
        column: usize,
        value: f64,
    },

    #[error("enumeration of {terms} terms exceeds the limit of {limit}")]
    EnumerationTooLarge { terms: f64, limit: f64 },

    #[error("degenerate weight distribution: an enumerated term has a zero weight sum")]
    DegenerateWeightPmf,

    #[error("weight support values must be distinct and nonnegative")]
    InvalidWeightSupport,

    #[error("policy class is empty")]
    EmptyPolicyClass,

    #[error("non-finite gradient at iteration {iteration}, coordinate {coordinate}")]
    NonFiniteGradient { iteration: usize, coordinate: usize },

    #[error("dimension mismatch: {context} expects {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("n must be positive")]
    ZeroSampleSize,

    #[error("trials must be at least 1")]
    ZeroTrials,

    #[error("{0}")]
    InvalidConfig(String),
}
