//! The two reductions between ratio-of-expectations and expected-ratio
//! guarantees, and the single-sample variant of the first.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::basic::{sample_threshold, SampleThreshold};
use super::{build, draw_samples, exceeds, flip, Chance, Decision, Observation, OnlinePolicy, PolicyRef, PolicyRun, Randomness, SampleBased};
use crate::distributions::RandomizedThreshold;
use crate::error::{LabError, Result};
use crate::evaluation::evaluate_auto;
use crate::feasibility::{Estimate, FeasibilityFamily};
use crate::instances::Instance;

/// Parameters of the RoE-to-EoR reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReductionParams {
    pub gamma: f64,
    pub delta: f64,
    pub k: f64,
    pub c: f64,
    /// RoE of the subroutine on the core (truncated) instance.
    pub alpha: f64,
}

impl Default for ReductionParams {
    fn default() -> Self {
        Self::for_alpha(0.5, 2.0, 3.0, 1.0)
    }
}

impl ReductionParams {
    /// Parameters with the smallest admissible `c` for this `alpha`.
    pub fn for_alpha(gamma: f64, delta: f64, k: f64, alpha: f64) -> Self {
        let mut p = Self { gamma, delta, k, c: 0.0, alpha };
        p.c = p.min_c();
        p
    }

    /// `(4 + 2 delta) / (3 (delta - 1)^2) * ln(k / alpha)`.
    pub fn min_c(&self) -> f64 {
        (4.0 + 2.0 * self.delta) / (3.0 * (self.delta - 1.0).powi(2)) * (self.k / self.alpha).ln()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(LabError::bad(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.delta > 1.0) {
            return Err(LabError::bad(format!("delta must exceed 1, got {}", self.delta)));
        }
        if !(self.k > 2.0) {
            return Err(LabError::bad(format!("k must exceed 2, got {}", self.k)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(LabError::bad(format!("alpha must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.c > 0.0) {
            return Err(LabError::bad(format!("c must be positive, got {}", self.c)));
        }
        Ok(())
    }

    /// Whether `c` meets the lower bound required by the superstar lemma.
    pub fn satisfies_constraint(&self) -> bool {
        self.c >= self.min_c() * (1.0 - 1e-12)
    }

    /// `gamma ln(1/gamma) / (c + 1)`.
    pub fn superstar_bound(&self) -> f64 {
        self.gamma * (1.0 / self.gamma).ln() / (self.c + 1.0)
    }

    /// `(gamma/delta) ((k - delta)/k) alpha`.
    pub fn combinatorial_bound(&self) -> f64 {
        self.gamma / self.delta * ((self.k - self.delta) / self.k) * self.alpha
    }

    /// The guaranteed expected ratio, the smaller of the two branch bounds.
    pub fn guarantee(&self) -> f64 {
        self.superstar_bound().min(self.combinatorial_bound())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Superstar,
    Combinatorial,
}

/// Accepts the first feasible arrival that exceeds `thr`, then nothing else.
#[derive(Clone)]
struct SuperstarRun {
    thr: RandomizedThreshold,
    family: Arc<FeasibilityFamily>,
    done: bool,
}

impl PolicyRun for SuperstarRun {
    fn decide(&mut self, obs: &Observation<'_>, chance: &mut dyn Chance) -> Decision {
        if self.done || !self.family.can_add(obs.selected, obs.element) {
            return Decision::Reject;
        }
        if exceeds(chance, &self.thr, obs.weight) {
            self.done = true;
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

/// Feeds the subroutine while arrivals stay at or below the threshold and
/// rejects everything from the first exceedance on.
struct CoreRun {
    thr: RandomizedThreshold,
    sub: Box<dyn PolicyRun>,
    stopped: bool,
}

impl PolicyRun for CoreRun {
    fn decide(&mut self, obs: &Observation<'_>, chance: &mut dyn Chance) -> Decision {
        if self.stopped {
            return Decision::Reject;
        }
        if exceeds(chance, &self.thr, obs.weight) {
            self.stopped = true;
            return Decision::Reject;
        }
        self.sub.decide(obs, chance)
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(CoreRun { thr: self.thr, sub: self.sub.box_clone(), stopped: self.stopped })
    }
}

fn combined_randomness(thr: &RandomizedThreshold, sub: Randomness) -> Randomness {
    let q = thr.accept_prob_at_atom;
    match sub {
        Randomness::Undeclared => Randomness::Undeclared,
        Randomness::Declared => Randomness::Declared,
        Randomness::None if q > 0.0 && q < 1.0 => Randomness::Declared,
        Randomness::None => Randomness::None,
    }
}

/// RoE-to-EoR composite.
pub struct RoeToEor {
    params: ReductionParams,
    thr: RandomizedThreshold,
    w: Estimate,
    branch: Branch,
    sub: PolicyRef,
    truncated: Instance,
    family: Arc<FeasibilityFamily>,
}

impl RoeToEor {
    /// Composite around a subroutine already built for the truncated
    /// instance, with known parameters.
    pub fn with_subroutine(instance: &Instance, sub: PolicyRef, params: ReductionParams, seed: u64) -> Result<Self> {
        params.validate()?;
        let thr = instance.dist().solve_gamma_threshold(params.gamma)?;
        let truncated = core_instance(instance, &thr)?;
        let w = truncated.family().expected_offline_value(truncated.dist(), seed);
        let branch = if w.value <= params.c * thr.tau { Branch::Superstar } else { Branch::Combinatorial };
        Ok(Self { params, thr, w, branch, sub, truncated, family: Arc::new(instance.family().clone()) })
    }

    pub fn params(&self) -> &ReductionParams {
        &self.params
    }

    pub fn threshold(&self) -> RandomizedThreshold {
        self.thr
    }

    /// `W = E[f(w)]` under the truncated law.
    pub fn core_value(&self) -> Estimate {
        self.w
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    pub fn subroutine(&self) -> &PolicyRef {
        &self.sub
    }

    /// The instance conditioned on no weight exceeding the threshold.
    pub fn truncated(&self) -> &Instance {
        &self.truncated
    }
}

/// The instance with every law truncated at `thr`.
pub fn core_instance(instance: &Instance, thr: &RandomizedThreshold) -> Result<Instance> {
    let label = format!("core({})", instance.label());
    Ok(instance.with_dist(instance.dist().truncate(thr)?)?.with_label(label))
}

/// Builds the composite: the subroutine `sub_spec` is built on the truncated
/// instance, its RoE there is measured as `alpha` (1 when the truncated
/// optimum is identically 0), and `c` defaults to the smallest admissible
/// value.
pub fn roe_to_eor(
    instance: &Instance,
    sub_spec: &str,
    params: ReductionParams,
    c: Option<f64>,
    seed: u64,
) -> Result<RoeToEor> {
    let thr = instance.dist().solve_gamma_threshold(params.gamma)?;
    let truncated = core_instance(instance, &thr)?;
    let sub = build(sub_spec, &truncated)?;
    let alpha = measured_roe(&truncated, &sub, seed)?;
    if alpha <= 0.0 {
        return Err(LabError::bad(format!("subroutine {sub_spec} has zero RoE on the core instance")));
    }
    let mut p = ReductionParams::for_alpha(params.gamma, params.delta, params.k, alpha.min(1.0));
    if let Some(c) = c {
        p.c = c;
    }
    RoeToEor::with_subroutine(instance, sub, p, seed)
}

/// Exact RoE of `policy` on `instance` (Monte Carlo past the enumeration
/// cap), with the convention 1 when the optimum is identically 0.
pub fn measured_roe(instance: &Instance, policy: &PolicyRef, seed: u64) -> Result<f64> {
    let r = evaluate_auto(instance, policy.as_ref(), seed)?;
    Ok(if r.expected_opt <= 0.0 { 1.0 } else { r.roe })
}

impl OnlinePolicy for RoeToEor {
    fn name(&self) -> String {
        let p = &self.params;
        format!("roe_to_eor(sub={},gamma={},delta={},k={},c={})", self.sub.name(), p.gamma, p.delta, p.k, p.c)
    }

    fn randomness(&self) -> Randomness {
        match self.branch {
            Branch::Superstar => combined_randomness(&self.thr, Randomness::None),
            Branch::Combinatorial => combined_randomness(&self.thr, self.sub.randomness()),
        }
    }

    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        match self.branch {
            Branch::Superstar => Box::new(SuperstarRun { thr: self.thr, family: self.family.clone(), done: false }),
            Branch::Combinatorial => Box::new(CoreRun { thr: self.thr, sub: self.sub.start(chance), stopped: false }),
        }
    }

    fn single_choice_threshold(&self) -> Option<RandomizedThreshold> {
        let single = matches!(*self.family, FeasibilityFamily::SingleChoice { .. });
        (single && self.branch == Branch::Superstar).then_some(self.thr)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "params": self.params,
            "tau": self.thr.tau,
            "accept_prob_at_atom": self.thr.accept_prob_at_atom,
            "core_value": self.w,
            "branch": self.branch,
            "constraint_satisfied": self.params.satisfies_constraint(),
            "guarantee": self.params.guarantee(),
        })
    }
}

/// EoR-to-RoE composite.
pub struct EorToRoe {
    alpha: f64,
    expected_max: f64,
    expected_opt: Estimate,
    branch: Branch,
    thr: RandomizedThreshold,
    sub: PolicyRef,
    family: Arc<FeasibilityFamily>,
}

impl EorToRoe {
    pub fn with_subroutine(instance: &Instance, sub: PolicyRef, alpha: f64, seed: u64) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(LabError::bad(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let expected_max = instance.dist().expected_max();
        let expected_opt = instance.family().expected_offline_value(instance.dist(), seed);
        let branch = if expected_max >= alpha * expected_opt.value / 34.0 {
            Branch::Superstar
        } else {
            Branch::Combinatorial
        };
        // weak inequality: w >= A/2 accepts
        let thr = RandomizedThreshold::new(expected_max / 2.0, 1.0);
        Ok(Self { alpha, expected_max, expected_opt, branch, thr, sub, family: Arc::new(instance.family().clone()) })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn branch(&self) -> Branch {
        self.branch
    }

    /// `A = E[max w]`.
    pub fn expected_max(&self) -> f64 {
        self.expected_max
    }

    pub fn expected_opt(&self) -> Estimate {
        self.expected_opt
    }

    /// `alpha / 68`.
    pub fn guarantee(&self) -> f64 {
        self.alpha / 68.0
    }
}

/// Builds the composite around `sub_spec` on the same instance; `alpha`
/// defaults to the subroutine's measured EoR.
pub fn eor_to_roe(instance: &Instance, sub_spec: &str, alpha: Option<f64>, seed: u64) -> Result<EorToRoe> {
    let sub = build(sub_spec, instance)?;
    let alpha = match alpha {
        Some(a) => a,
        None => evaluate_auto(instance, sub.as_ref(), seed)?.eor,
    };
    EorToRoe::with_subroutine(instance, sub, alpha, seed)
}

impl OnlinePolicy for EorToRoe {
    fn name(&self) -> String {
        format!("eor_to_roe(sub={},alpha={})", self.sub.name(), self.alpha)
    }

    fn randomness(&self) -> Randomness {
        match self.branch {
            Branch::Superstar => Randomness::None,
            Branch::Combinatorial => self.sub.randomness(),
        }
    }

    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        match self.branch {
            Branch::Superstar => Box::new(SuperstarRun { thr: self.thr, family: self.family.clone(), done: false }),
            Branch::Combinatorial => self.sub.start(chance),
        }
    }

    fn single_choice_threshold(&self) -> Option<RandomizedThreshold> {
        let single = matches!(*self.family, FeasibilityFamily::SingleChoice { .. });
        (single && self.branch == Branch::Superstar).then_some(self.thr)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({
            "alpha": self.alpha,
            "expected_max": self.expected_max,
            "expected_opt": self.expected_opt,
            "branch": self.branch,
            "guarantee": self.guarantee(),
        })
    }
}

/// Single-sample composite: one sample per element plus a fair coin. Heads
/// takes the first arrival strictly above the largest sample; tails runs the
/// sample-threshold subroutine on the same samples.
pub struct SingleSample {
    instance: Arc<Instance>,
    sub: SampleThreshold,
    family: Arc<FeasibilityFamily>,
}

pub fn single_sample_roe_to_eor(instance: &Instance) -> Result<SingleSample> {
    Ok(SingleSample {
        instance: Arc::new(instance.clone()),
        sub: sample_threshold(instance),
        family: Arc::new(instance.family().clone()),
    })
}

impl SingleSample {
    pub fn subroutine(&self) -> &SampleThreshold {
        &self.sub
    }
}

impl OnlinePolicy for SingleSample {
    fn name(&self) -> String {
        format!("single_sample(sub={})", SampleBased::name(&self.sub))
    }

    fn randomness(&self) -> Randomness {
        Randomness::Declared
    }

    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        let samples = draw_samples(&self.instance, chance);
        if flip(chance, 0.5) {
            let tau_hat = samples.iter().copied().fold(0.0, f64::max);
            Box::new(SuperstarRun { thr: RandomizedThreshold::strict(tau_hat), family: self.family.clone(), done: false })
        } else {
            self.sub.start_with_samples(samples)
        }
    }

    fn start_branches(&self) -> u64 {
        self.instance.dist().joint_support().saturating_mul(2)
    }
}
