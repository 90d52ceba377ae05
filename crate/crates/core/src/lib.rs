//! Exact arithmetic for the local p-adic Simpson correspondence at a finite
//! truncation level.
//!
//! Everything runs over the truncated cyclotomic ring `O_{K_n}/p^N` with
//! exact carries: there is no floating point anywhere, and every reported
//! valuation is an exact rational with denominator dividing the ramification
//! index. The crate is organised bottom-up:
//!
//! * [`cyclotomic`]: the coefficient ring, its uniformiser arithmetic and
//!   exact valuations;
//! * [`toric`]: truncated Laurent windows over a chart and the Galois action;
//! * [`matrix`]: dense matrices over any coefficient ring in this crate;
//! * [`period`]: the truncated period lattice and the two distinguished bases
//!   of its structure constants;
//! * [`series`]: tail bounds and matrix exponential / logarithm with exact
//!   error accounting;
//! * [`homology`]: Smith forms and Koszul cohomology with elementary-divisor
//!   reports;
//! * [`gamma_rep`]: semilinear representations of the chart group;
//! * [`higgs`]: Higgs modules and their Koszul cohomology;
//! * [`simpson`]: the two correspondence functors and their comparison
//!   reports;
//! * [`decompletion`]: cocycle descent from the perfectoid cover back to the
//!   finite level.
//!
//! The `parallel` feature (on by default) routes the hot loops through rayon;
//! with it disabled the same entry points run sequentially. [`par::Exec`]
//! selects the strategy explicitly for benchmarks.

pub mod cyclotomic;
pub mod decompletion;
pub mod gamma_rep;
pub mod higgs;
pub mod homology;
pub mod matrix;
pub mod par;
pub mod period;
pub mod series;
pub mod simpson;
pub mod toric;

use num_rational::Ratio;

/// Exact rational number used for valuations and smallness parameters.
pub type Rat = Ratio<i64>;

/// Crate-wide error type. Every failure mode carries enough context to
/// reconstruct what was attempted.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// The requested modulus `p^N` does not fit in 63 bits.
    #[error("precision out of range: {p}^{n} exceeds 2^63")]
    PrecisionOutOfRange { p: u64, n: u32 },
    /// Parameter validation failed while building a context.
    #[error("invalid context parameter: {0}")]
    InvalidParameter(String),
    /// The smallness exponent does not clear the ramification bound.
    #[error("smallness hypothesis violated: a = {a} must exceed {bound} and a*e must be integral")]
    SmallnessHypothesis { a: Rat, bound: Rat },
    /// Division requested by an element that is not a unit.
    #[error("non-unit: operand has valuation {val}")]
    NonUnit { val: String },
    /// Exact division failed: the dividend is not a multiple of the divisor.
    #[error("not divisible: remainder at uniformiser step {step}")]
    NotDivisible { step: usize },
    /// A fractional exponent needs a deeper cyclotomic tower than the context holds.
    #[error("insufficient tower level: exponent {alpha} needs level {needed}, context has {have}")]
    InsufficientTowerLevel { alpha: Rat, needed: u32, have: u32 },
    /// `epsilon_alpha` is only defined for nonzero classes.
    #[error("epsilon undefined at zero")]
    EpsilonUndefinedAtZero,
    /// A Laurent element escaped its degree window.
    #[error("window overflow: monomial degree {degree} outside [-{radius}, {radius}]")]
    WindowOverflow { degree: i64, radius: i64 },
    /// A projection expected a complement element but found integral support.
    #[error("not in complement: integral monomial {monomial} has nonzero coefficient")]
    NotInComplement { monomial: String },
    /// A binomial or exponential series does not converge at this argument.
    #[error("divergent exponent: argument valuation {val} at or below {floor}")]
    DivergentExponent { val: String, floor: Rat },
    /// The matrix logarithm needs a unipotent-mod-small argument.
    #[error("log series not nilpotent here: residual valuation {val} after {terms} terms")]
    LogNotNilpotent { val: String, terms: usize },
    /// Koszul construction got non-commuting operators.
    #[error("not a Koszul datum: operators {i} and {j} do not commute")]
    NotKoszul { i: usize, j: usize },
    /// A claimed 1-cocycle fails the cocycle identity.
    #[error("cocycle violation: pair ({i}, {j}) disagrees at valuation {val}")]
    CocycleViolation { i: usize, j: usize, val: String },
    /// A representation or cocycle misses the smallness radius needed here.
    #[error("not a-small: entry valuation {val} below required {need}")]
    NotSmall { val: String, need: Rat },
    /// A claimed invertible matrix is not invertible over the truncated ring.
    #[error("not flat: pivot at row {row} is not a unit")]
    NotFlat { row: usize },
    /// The sampled lattice radius does not satisfy the strict inequality a functor needs.
    #[error("rho too large for smallness: need valuation above {need}, got {got}")]
    RhoTooLarge { need: String, got: String },
    /// An iteration that must contract failed to gain valuation.
    #[error("contraction failure at step {step}: valuation stayed at {val}")]
    ContractionFailure { step: usize, val: String },
    /// Matrix shapes do not match the requested operation.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    /// Unipotent inversion ran out of iterations.
    #[error("not unipotent at this precision: {terms} Neumann terms did not terminate")]
    NotUnipotent { terms: usize },
    /// Input deserialization failed.
    #[error("malformed input: {0}")]
    MalformedInput(String),
    /// An always-on internal consistency check did not hold.
    #[error("verification failed: {0}")]
    VerificationFailed(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
