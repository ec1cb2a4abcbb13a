//! Exact and Monte Carlo laboratory for combinatorial prophet inequalities.
//!
//! An [`Instance`] couples a product of finite-support weight laws with a
//! downward-closed [`FeasibilityFamily`] and an arrival order. Online policies
//! ([`policies::OnlinePolicy`]) see one weight at a time and decide
//! irrevocably. The [`evaluation`] module measures them against the offline
//! optimum, either exactly (full enumeration of weights and declared policy
//! randomness) or by seeded Monte Carlo.
//!
//! Parallel execution is provided by rayon behind the default `parallel`
//! feature; building with `--no-default-features` gives a purely sequential
//! crate with identical results.

pub mod analysis;
pub mod distributions;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod feasibility;
pub mod instances;
pub mod oracle;
pub mod policies;
pub mod rng;
pub mod verify;

pub use distributions::{DiscreteDistribution, ProductDistribution, RandomizedThreshold};
pub use error::{LabError, Result};
pub use evaluation::{MetricReport, Mode};
pub use feasibility::{FeasibilityFamily, WeightVector};
pub use instances::Instance;
pub use policies::{Decision, OnlinePolicy, PolicyRef};

/// Absolute tolerance used when comparing probabilities.
pub const PROB_TOL: f64 = 1e-12;

/// Relative tolerance for "the algorithm matched the optimum".
pub const MATCH_TOL: f64 = 1e-12;

/// `|a - b| <= MATCH_TOL * max(1, |b|)`.
pub fn matches_value(a: f64, b: f64) -> bool {
    (a - b).abs() <= MATCH_TOL * b.abs().max(1.0)
}
