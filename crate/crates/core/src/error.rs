use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter is outside its admissible range.
    InvalidParameter(&'static str),
    /// Regressor (or sample) has zero variance.
    DegenerateInput,
    LengthMismatch { expected: usize, found: usize },
    StageOutOfRange { stage: usize, horizon: usize },
    NodeOutOfRange { stage: usize, node: usize },
    InvalidOrder(usize),
    /// A raw transition row sums below the underflow threshold.
    NumericalUnderflow { stage: usize, node: usize, mass: f64 },
    /// Incoming state lies outside the energy or wealth box.
    Infeasible,
    Unbounded,
    InfeasibleInput(&'static str),
    /// The bid/ask spread condition fails at this stage (and node).
    ConditionViolated { stage: usize, node: usize },
    /// Wealth below the floor where the exponential would overflow.
    OverflowGuard { wealth: f64, floor: f64 },
    MaxIterations(usize),
    NotTrained,
    DomainError,
    BracketInvalid,
    MaxEvaluations(usize),
    DegenerateSample,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(what) => write!(f, "invalid parameter: {what}"),
            Error::DegenerateInput => f.write_str("regressor has zero variance"),
            Error::LengthMismatch { expected, found } => {
                write!(f, "length mismatch: expected {expected}, found {found}")
            }
            Error::StageOutOfRange { stage, horizon } => {
                write!(f, "stage {stage} out of range 1..={horizon}")
            }
            Error::NodeOutOfRange { stage, node } => {
                write!(f, "node {node} does not exist at stage {stage}")
            }
            Error::InvalidOrder(n) => write!(f, "quadrature order {n} must be at least 1"),
            Error::NumericalUnderflow { stage, node, mass } => write!(
                f,
                "transition row from node {node} at stage {stage} has raw mass {mass:e}; \
                 the sampling density is badly mismatched"
            ),
            Error::Infeasible => f.write_str("state outside the feasible box"),
            Error::Unbounded => f.write_str("stage problem is unbounded (missing lower cut)"),
            Error::InfeasibleInput(what) => write!(f, "infeasible input trajectory: {what}"),
            Error::ConditionViolated { stage, node } => write!(
                f,
                "spread condition bid/c- <= ask/c+ fails at stage {stage}, node {node}"
            ),
            Error::OverflowGuard { wealth, floor } => {
                write!(f, "wealth {wealth} is below the overflow floor {floor}")
            }
            Error::MaxIterations(n) => write!(f, "no convergence within {n} iterations"),
            Error::NotTrained => f.write_str("policy has no completed iteration"),
            Error::DomainError => f.write_str("logarithm argument 1 - rho*phi is not positive"),
            Error::BracketInvalid => f.write_str("bisection bracket does not enclose the root"),
            Error::MaxEvaluations(n) => write!(f, "bisection exceeded {n} evaluations"),
            Error::DegenerateSample => f.write_str("sample has fewer than two distinct values"),
        }
    }
}

impl core::error::Error for Error {}
