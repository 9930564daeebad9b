use thiserror::Error;

/// Errors raised by the kernels, models, engine and harness.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A bound was requested outside the regime in which it holds.
    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),

    /// The 1-Wasserstein distance between the two families cannot be evaluated exactly.
    #[error("no closed form for the 1-Wasserstein distance between {left} and {right}")]
    NoClosedForm { left: String, right: String },

    /// A distribution sequence breaks its own variation budget.
    #[error(
        "variation budget violated: W1(P_{i}, P_{j}) = {distance} exceeds rho({k}) = {budget}",
        k = j - i
    )]
    BudgetViolated {
        i: usize,
        j: usize,
        distance: f64,
        budget: f64,
    },

    /// A tabulated budget was queried past its last entry.
    #[error("tabulated budget has no entry for k = {k} (table ends at {last})")]
    BudgetOutOfRange { k: usize, last: usize },

    /// The uncertainty set of a sample (ball intersected with the support) is empty.
    #[error("empty uncertainty set for sample {index}: ball of radius {radius} misses the support")]
    EmptyUncertaintySet { index: usize, radius: f64 },

    /// Structurally invalid input (dimension mismatch, empty lists, bad weights).
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A Monte Carlo trial failed; carries the trial index.
    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain(msg: impl Into<String>) -> Error {
    Error::Domain(msg.into())
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
