use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid base system: {0}")]
    InvalidSystem(String),

    #[error("invalid base set: {0}")]
    InvalidSet(String),

    /// A set representation that the system cannot measure, e.g. a digit
    /// cylinder on a rotation.
    #[error("{set} sets are not supported on {kind} systems")]
    IncompatibleSet { kind: &'static str, set: &'static str },

    /// Diagnostic only: finite budgets say nothing about recurrence itself.
    #[error("orbit did not enter the target set within {max_steps} steps")]
    NonRecurrentWithinBudget { max_steps: u64 },

    #[error("exact integration requires a piecewise-constant integrand")]
    UnsupportedExactIntegration,

    #[error("invalid roof: {0}")]
    InvalidRoof(String),

    #[error("roof value {value} at x={at} is below the declared lower bound {lower_bound}")]
    RoofBoundViolation { value: f64, lower_bound: f64, at: f64 },

    #[error("value {value} at x={at} exceeds the declared sampling bound {bound}")]
    SupBoundViolation { value: f64, bound: f64, at: f64 },

    #[error("rejection sampler acceptance rate {rate:.2e} fell below 1e-3")]
    BadSupBound { rate: f64 },

    #[error("invalid flow set: {0}")]
    InvalidFlowSet(String),

    #[error("exit width {s} outside (0, {max}]")]
    InvalidExitWidth { s: f64, max: f64 },

    #[error("point is not in the set")]
    NotInSet,

    #[error("the set's projection on the base has zero measure")]
    EmptyProjection,

    #[error("entropy quotient is undefined for a zero-entropy base")]
    ZeroEntropyBase,

    #[error("scale {scale}: t2={t2} exceeds the scaled roof minimum {bound}")]
    ScaleRange { scale: f64, t2: f64, bound: f64 },

    #[error("closed forms of {quantity} disagree: {first} vs {second}")]
    FormulaMismatch {
        quantity: &'static str,
        first: f64,
        second: f64,
    },

    #[error("invalid rational model: {0}")]
    InvalidModel(String),

    #[error("invalid Monte Carlo configuration: {0}")]
    InvalidMcConfig(String),
}
