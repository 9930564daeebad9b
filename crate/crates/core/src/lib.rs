//! Sample average approximations of chance constrained programs whose samples are
//! drawn from a drifting, Wasserstein-budgeted sequence of distributions.
//!
//! The crate is split into:
//!
//! * [`kernels`]: binomial and Poisson binomial tails, the Hoeffding envelope and the
//!   minimum sample size for a target confidence.
//! * [`distributions`]: sampling families, exact 1-Wasserstein distances, variation
//!   budgets and reproducible draws of independent non-identical samples.
//! * [`saa`]: constraint functions, classic and robust empirical violation estimates,
//!   feasible sets and enumeration solving over finite decision sets.
//! * [`bounds`]: closed-form probability-of-infeasibility bounds.
//! * [`harness`]: Monte Carlo estimation of the probability of infeasibility and the
//!   bound comparison sweep.

// NaN-rejecting comparisons and full-precision coefficient tables are deliberate
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::excessive_precision)]

pub mod bounds;
pub mod distributions;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod saa;
pub(crate) mod seed;

pub use bounds::{BoundInputs, BoundReport, BoundValue, CoveringFactor};
pub use distributions::{
    DistributionSequence, DistributionSpec, Family, Norm, SupportSet, VariationBudget,
};
pub use error::{Error, Result};
pub use harness::{EstimateResult, RadiiRule, TrialConfig};
pub use kernels::{BinomialParams, PoissonBinomialParams};
pub use saa::{
    BiAffine, ConstraintFunction, DecisionSet, ProblemInstance, RiskConfig, SampleBatch,
    SupportMode,
};
