//! Online selection policies.
//!
//! A policy is built for one instance (it may precompute thresholds or a
//! full decision table) and then started once per realization. A started
//! run sees the arriving elements one at a time and answers
//! [`Decision::Accept`] or [`Decision::Reject`]. All randomness goes through
//! a [`Chance`] handle so that exact evaluation can enumerate it.

use std::sync::Arc;

use rand::Rng;
use serde_json::Value;

use crate::distributions::RandomizedThreshold;
use crate::error::{LabError, Result};
use crate::instances::Instance;

mod basic;
mod optimal;
mod reductions;
pub mod spec;

pub use basic::{
    always_first, catch_max_pair, eor_threshold, fixed_threshold, half_expected_max, per_block_threshold, pick,
    random_pair, sample_threshold, secretary, SampleThreshold,
};
pub use optimal::{optimal_policy, Objective, OptimalPolicy, DP_LEAF_CAP, DP_STATE_CAP};
pub use reductions::{
    core_instance, eor_to_roe, measured_roe, roe_to_eor, single_sample_roe_to_eor, Branch, EorToRoe,
    ReductionParams, RoeToEor, SingleSample,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Accept,
    Reject,
}

/// What kind of private randomness a policy consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Randomness {
    None,
    /// Finite, enumerable draws made through [`Chance`].
    Declared,
    /// Anything else; exact evaluation refuses such policies.
    Undeclared,
}

/// Source of a policy's private randomness.
pub trait Chance {
    /// Picks an index with the given probabilities.
    fn choose(&mut self, probs: &[f64]) -> usize;
}

/// Bernoulli(`p`) through a [`Chance`]; no draw is made when `p` is 0 or 1.
pub fn flip(chance: &mut dyn Chance, p: f64) -> bool {
    if p <= 0.0 {
        false
    } else if p >= 1.0 {
        true
    } else {
        chance.choose(&[1.0 - p, p]) == 1
    }
}

/// Whether `w` exceeds `thr`, flipping the atom coin only on a tie.
pub fn exceeds(chance: &mut dyn Chance, thr: &RandomizedThreshold, w: f64) -> bool {
    if w > thr.tau {
        true
    } else if w == thr.tau {
        flip(chance, thr.accept_prob_at_atom)
    } else {
        false
    }
}

/// [`Chance`] backed by a random generator.
pub struct RngChance<R>(pub R);

impl<R: Rng> Chance for RngChance<R> {
    fn choose(&mut self, probs: &[f64]) -> usize {
        let u: f64 = self.0.gen();
        let mut acc = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}

/// What a run sees when an element arrives.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    /// Zero-based arrival position.
    pub step: usize,
    pub element: usize,
    pub weight: f64,
    /// Elements accepted so far.
    pub selected: &'a [usize],
    /// Earlier arrivals as `(element, weight)`.
    pub prefix: &'a [(usize, f64)],
}

/// One in-progress execution of a policy.
pub trait PolicyRun: Send {
    fn decide(&mut self, obs: &Observation<'_>, chance: &mut dyn Chance) -> Decision;
    fn box_clone(&self) -> Box<dyn PolicyRun>;
}

/// A policy constructed for a particular instance.
pub trait OnlinePolicy: Send + Sync {
    /// Canonical spec string, `name(key=value,...)`.
    fn name(&self) -> String;

    fn randomness(&self) -> Randomness {
        Randomness::None
    }

    /// Starts a run; start-time randomness (samples, coins) is drawn here.
    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun>;

    /// For single-choice instances: `Some(thr)` if the policy is exactly
    /// "accept the first element exceeding `thr`", which admits a
    /// closed-form exact evaluation.
    fn single_choice_threshold(&self) -> Option<RandomizedThreshold> {
        None
    }

    /// Lower bound on the number of distinct outcomes of the randomness drawn
    /// in [`OnlinePolicy::start`]; lets exact evaluation refuse early.
    fn start_branches(&self) -> u64 {
        1
    }

    /// Construction-time quantities worth reporting.
    fn metadata(&self) -> Value {
        Value::Null
    }
}

pub type PolicyRef = Arc<dyn OnlinePolicy>;

/// A policy that gets one sample per element instead of the distributions.
pub trait SampleBased: Send + Sync {
    fn name(&self) -> String;
    fn start_with_samples(&self, samples: Arc<[f64]>) -> Box<dyn PolicyRun>;
}

/// Draws one sample per element through `chance`.
pub fn draw_samples(instance: &Instance, chance: &mut dyn Chance) -> Arc<[f64]> {
    instance
        .dist()
        .elements()
        .iter()
        .map(|d| d.atoms()[chance.choose(&d.probs())].0)
        .collect()
}

/// Builds a policy for `instance` from a spec such as `fixed_threshold(t=1.5)`.
pub fn build(spec_str: &str, instance: &Instance) -> Result<PolicyRef> {
    let call = spec::parse_call(spec_str)?;
    let inst = instance;
    let policy: PolicyRef = match call.name.as_str() {
        "fixed_threshold" => {
            call.only(&["t", "at"])?;
            Arc::new(fixed_threshold(inst, call.f64_required("t")?, call.f64_or("at", 0.0)?)?)
        }
        "half_expected_max" => {
            call.only(&[])?;
            Arc::new(half_expected_max(inst)?)
        }
        "eor_threshold" => {
            call.only(&[])?;
            Arc::new(eor_threshold(inst)?)
        }
        "always_first" | "greedy" => {
            call.only(&[])?;
            Arc::new(always_first(inst))
        }
        "pick" | "always_target" => {
            call.only(&["e"])?;
            Arc::new(pick(inst, call.usize_or("e", 0)?)?)
        }
        "secretary" => {
            call.only(&["r"])?;
            let r = match call.get("r") {
                Some(_) => call.usize_or("r", 0)?,
                None => (inst.ground_size() as f64 / std::f64::consts::E).floor() as usize,
            };
            Arc::new(secretary(inst, r)?)
        }
        "per_block_threshold" => {
            call.only(&[])?;
            Arc::new(per_block_threshold(inst)?)
        }
        "sample_threshold" => {
            call.only(&[])?;
            Arc::new(sample_threshold(inst))
        }
        "random_pair" => {
            call.only(&[])?;
            Arc::new(random_pair(inst)?)
        }
        "catch_max_pair" => {
            call.only(&["gamma"])?;
            Arc::new(catch_max_pair(inst, call.f64_or("gamma", (-1.0f64).exp())?)?)
        }
        "optimal_roe" => Arc::new(optimal_policy(inst, Objective::Roe)?),
        "optimal_eor" => Arc::new(optimal_policy(inst, Objective::Eor)?),
        "optimal_pbm" => Arc::new(optimal_policy(inst, Objective::Pbm)?),
        "roe_to_eor" => {
            call.only(&["sub", "gamma", "delta", "k", "c", "seed"])?;
            let sub = call.str_or("sub", "optimal_roe");
            let mut params = ReductionParams::default();
            params.gamma = call.f64_or("gamma", params.gamma)?;
            params.delta = call.f64_or("delta", params.delta)?;
            params.k = call.f64_or("k", params.k)?;
            let c = call.get("c").map(spec::parse_number).transpose()?;
            Arc::new(roe_to_eor(inst, sub, params, c, call.usize_or("seed", 0)? as u64)?)
        }
        "eor_to_roe" => {
            call.only(&["sub", "alpha", "seed"])?;
            let sub = call.str_or("sub", "optimal_eor");
            let alpha = call.get("alpha").map(spec::parse_number).transpose()?;
            Arc::new(eor_to_roe(inst, sub, alpha, call.usize_or("seed", 0)? as u64)?)
        }
        "single_sample" => {
            call.only(&["gamma"])?;
            Arc::new(single_sample_roe_to_eor(inst)?)
        }
        other => return Err(LabError::UnknownPolicy(other.to_string())),
    };
    Ok(policy)
}

/// Names accepted by [`build`], for help output.
pub const POLICY_NAMES: &[&str] = &[
    "fixed_threshold(t=..,at=..)",
    "half_expected_max",
    "eor_threshold",
    "always_first",
    "pick(e=..)",
    "secretary(r=..)",
    "per_block_threshold",
    "sample_threshold",
    "random_pair",
    "catch_max_pair(gamma=..)",
    "optimal_roe",
    "optimal_eor",
    "optimal_pbm",
    "roe_to_eor(sub=..,gamma=..,delta=..,k=..,c=..)",
    "eor_to_roe(sub=..,alpha=..)",
    "single_sample",
];

/// Every non-optimal library policy that applies to `instance`, with
/// default parameters. Policies whose family does not fit are skipped.
pub fn library_policies(instance: &Instance) -> Vec<PolicyRef> {
    const SPECS: &[&str] = &[
        "half_expected_max",
        "eor_threshold",
        "always_first",
        "pick(e=0)",
        "secretary(r=1)",
        "per_block_threshold",
        "sample_threshold",
        "random_pair",
        "catch_max_pair",
        "roe_to_eor",
        "eor_to_roe",
        "single_sample",
    ];
    SPECS.iter().filter_map(|s| build(s, instance).ok()).collect()
}
