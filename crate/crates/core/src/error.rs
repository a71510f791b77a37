use thiserror::Error;

use crate::lattice::DigitRole;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NonSquare { rows: usize, cols: usize },

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("scaling matrix is singular")]
    Singular,

    #[error("scaling matrix is not expanding: minimum eigenvalue modulus {min_modulus} is not > 1")]
    NotExpanding { min_modulus: f64 },

    #[error("digit set {role} must contain the zero vector")]
    MissingZero { role: DigitRole },

    #[error("digit set {role} contains {digit:?} twice")]
    DuplicateDigit { role: DigitRole, digit: Vec<i64> },

    #[error("digit set is empty")]
    EmptyDigits,

    #[error("#B = {b} but #L = {l}; a Hadamard triple needs equal cardinalities")]
    CardinalityMismatch { b: usize, l: usize },

    #[error("digits span a rank-{rank} lattice in dimension {dim}; the dual is not a lattice")]
    RankDeficient { rank: usize, dim: usize },

    #[error("not a Hadamard triple: unitarity defect {defect:e} is not below {tol:e}")]
    NotHadamard { defect: f64, tol: f64 },

    #[error("matrix is not unimodular (determinant {det})")]
    NonUnimodular { det: String },

    #[error("index {index} out of range for {len} digits")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("work estimate {requested} exceeds the configured budget {budget}")]
    BudgetExceeded { requested: u128, budget: u128 },

    #[error("cycle word must be nonempty")]
    EmptyWord,

    #[error("cycle is not a W_B-cycle")]
    NotWbCycle,

    #[error("R^{r} x {{0}} is not invariant for S: lower-left block is nonzero")]
    NotInvariant { r: usize },

    #[error("no digit l in L fixes the translate: sigma_(l_2)(y0) != y0 for all l")]
    NoFixedDigit,

    #[error("spectrum conditions not met: {0}")]
    ConditionsNotMet(String),

    #[error("fibers have unequal sizes {counts:?}")]
    UnequalFibers { counts: Vec<usize> },

    #[error("all transition weights vanish at state {state:?}")]
    DegenerateWeights { state: Vec<f64> },

    #[error("inconclusive: {0}")]
    Inconclusive(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
