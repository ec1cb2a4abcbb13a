//! Threshold rules and other baseline policies.

use std::sync::Arc;

use serde_json::json;

use super::{draw_samples, exceeds, Chance, Decision, Observation, OnlinePolicy, PolicyRun, Randomness, SampleBased};
use crate::distributions::{ProductDistribution, RandomizedThreshold};
use crate::error::{LabError, Result};
use crate::feasibility::FeasibilityFamily;
use crate::instances::Instance;

fn wrong_family(policy: &str, expected: &'static str) -> LabError {
    LabError::WrongFamily { policy: policy.to_string(), expected }
}

/// Accepts every feasible arrival that exceeds a randomized threshold. On
/// single-choice families this is "take the first exceedance".
#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    name: String,
    thr: RandomizedThreshold,
    family: Arc<FeasibilityFamily>,
}

#[derive(Clone)]
struct ThresholdRun {
    thr: RandomizedThreshold,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for ThresholdRun {
    fn decide(&mut self, obs: &Observation<'_>, chance: &mut dyn Chance) -> Decision {
        if self.family.can_add(obs.selected, obs.element) && exceeds(chance, &self.thr, obs.weight) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

impl ThresholdPolicy {
    pub fn threshold(&self) -> RandomizedThreshold {
        self.thr
    }
}

impl OnlinePolicy for ThresholdPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn randomness(&self) -> Randomness {
        let q = self.thr.accept_prob_at_atom;
        if q > 0.0 && q < 1.0 {
            Randomness::Declared
        } else {
            Randomness::None
        }
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(ThresholdRun { thr: self.thr, family: self.family.clone() })
    }

    fn single_choice_threshold(&self) -> Option<RandomizedThreshold> {
        matches!(*self.family, FeasibilityFamily::SingleChoice { .. }).then_some(self.thr)
    }

    fn metadata(&self) -> serde_json::Value {
        json!({ "tau": self.thr.tau, "accept_prob_at_atom": self.thr.accept_prob_at_atom })
    }
}

/// Accepts arrivals with weight strictly above `t`; an arrival exactly at
/// `t` is accepted with probability `at`.
pub fn fixed_threshold(instance: &Instance, t: f64, at: f64) -> Result<ThresholdPolicy> {
    if !(t >= 0.0) || !(0.0..=1.0).contains(&at) {
        return Err(LabError::bad(format!("fixed_threshold needs t >= 0 and at in [0, 1], got t={t}, at={at}")));
    }
    let name = if at == 0.0 { format!("fixed_threshold(t={t})") } else { format!("fixed_threshold(t={t},at={at})") };
    Ok(ThresholdPolicy { name, thr: RandomizedThreshold::new(t, at), family: Arc::new(instance.family().clone()) })
}

/// The classic prophet rule with threshold `E[max w]/2`.
pub fn half_expected_max(instance: &Instance) -> Result<ThresholdPolicy> {
    let t = instance.dist().expected_max() / 2.0;
    let mut p = fixed_threshold(instance, t, 0.0)?;
    p.name = "half_expected_max".into();
    Ok(p)
}

/// Threshold with `Pr[no weight exceeds it] = 1/e`. Single choice only.
pub fn eor_threshold(instance: &Instance) -> Result<ThresholdPolicy> {
    if !matches!(instance.family(), FeasibilityFamily::SingleChoice { .. }) {
        return Err(wrong_family("eor_threshold", "single"));
    }
    let thr = instance.dist().solve_gamma_threshold((-1.0f64).exp())?;
    Ok(ThresholdPolicy { name: "eor_threshold".into(), thr, family: Arc::new(instance.family().clone()) })
}

/// Greedy: accepts every arrival that keeps the selection feasible.
pub fn always_first(instance: &Instance) -> ThresholdPolicy {
    ThresholdPolicy {
        name: "always_first".into(),
        thr: RandomizedThreshold::new(0.0, 1.0),
        family: Arc::new(instance.family().clone()),
    }
}

#[derive(Debug, Clone)]
pub struct PickPolicy {
    target: usize,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for PickPolicy {
    fn decide(&mut self, obs: &Observation<'_>, _chance: &mut dyn Chance) -> Decision {
        if obs.element == self.target && self.family.can_add(obs.selected, obs.element) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

impl OnlinePolicy for PickPolicy {
    fn name(&self) -> String {
        format!("pick(e={})", self.target)
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

/// Accepts exactly the target element, whatever its weight.
pub fn pick(instance: &Instance, target: usize) -> Result<PickPolicy> {
    if target >= instance.ground_size() {
        return Err(LabError::IndexOutOfRange { index: target, ground_size: instance.ground_size() });
    }
    Ok(PickPolicy { target, family: Arc::new(instance.family().clone()) })
}

#[derive(Debug, Clone)]
pub struct SecretaryPolicy {
    r: usize,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for SecretaryPolicy {
    fn decide(&mut self, obs: &Observation<'_>, _chance: &mut dyn Chance) -> Decision {
        if obs.step < self.r {
            return Decision::Reject;
        }
        let bar = obs.prefix[..self.r].iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if obs.weight > bar && self.family.can_add(obs.selected, obs.element) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

impl OnlinePolicy for SecretaryPolicy {
    fn name(&self) -> String {
        format!("secretary(r={})", self.r)
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

/// Observes the first `r` arrivals, then accepts the first weight above all
/// of them.
pub fn secretary(instance: &Instance, r: usize) -> Result<SecretaryPolicy> {
    if r >= instance.ground_size() {
        return Err(LabError::bad(format!("secretary needs r < n, got r={r}, n={}", instance.ground_size())));
    }
    Ok(SecretaryPolicy { r, family: Arc::new(instance.family().clone()) })
}

/// Per-element strict thresholds, accepting whenever feasible.
#[derive(Debug, Clone)]
struct ElementThresholds {
    thresholds: Arc<[f64]>,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for ElementThresholds {
    fn decide(&mut self, obs: &Observation<'_>, _chance: &mut dyn Chance) -> Decision {
        if obs.weight > self.thresholds[obs.element] && self.family.can_add(obs.selected, obs.element) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

#[derive(Debug, Clone)]
pub struct PerBlockThreshold {
    run: ElementThresholds,
}

impl OnlinePolicy for PerBlockThreshold {
    fn name(&self) -> String {
        "per_block_threshold".into()
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(self.run.clone())
    }

    fn metadata(&self) -> serde_json::Value {
        json!({ "thresholds": self.run.thresholds.to_vec() })
    }
}

/// Within each partition block, the prophet rule with that block's
/// `E[max]/2`.
pub fn per_block_threshold(instance: &Instance) -> Result<PerBlockThreshold> {
    let FeasibilityFamily::Partition { blocks, .. } = instance.family() else {
        return Err(wrong_family("per_block_threshold", "partition"));
    };
    let mut thresholds = vec![0.0; instance.ground_size()];
    for block in blocks {
        let sub = ProductDistribution::new(block.iter().map(|&e| instance.dist().get(e).clone()).collect())?;
        let t = sub.expected_max() / 2.0;
        for &e in block {
            thresholds[e] = t;
        }
    }
    Ok(PerBlockThreshold {
        run: ElementThresholds { thresholds: thresholds.into(), family: Arc::new(instance.family().clone()) },
    })
}

/// Single-sample threshold rule: per-block maximum sample on partitions,
/// k-th largest sample on k-uniform families, overall maximum sample
/// otherwise. Strict exceedance, accept whenever feasible.
#[derive(Debug, Clone)]
pub struct SampleThreshold {
    instance: Arc<Instance>,
}

pub fn sample_threshold(instance: &Instance) -> SampleThreshold {
    SampleThreshold { instance: Arc::new(instance.clone()) }
}

impl SampleThreshold {
    pub fn thresholds(&self, samples: &[f64]) -> Vec<f64> {
        let n = samples.len();
        let global_max = samples.iter().copied().fold(0.0, f64::max);
        match self.instance.family() {
            FeasibilityFamily::Partition { blocks, .. } => {
                let mut t = vec![0.0; n];
                for b in blocks {
                    let m = b.iter().map(|&e| samples[e]).fold(0.0, f64::max);
                    for &e in b {
                        t[e] = m;
                    }
                }
                t
            }
            FeasibilityFamily::KUniform { k, .. } => {
                let mut s = samples.to_vec();
                s.sort_by(|a, b| b.total_cmp(a));
                vec![s[*k - 1]; n]
            }
            _ => vec![global_max; n],
        }
    }
}

impl SampleBased for SampleThreshold {
    fn name(&self) -> String {
        "sample_threshold".into()
    }

    fn start_with_samples(&self, samples: Arc<[f64]>) -> Box<dyn PolicyRun> {
        Box::new(ElementThresholds {
            thresholds: self.thresholds(&samples).into(),
            family: Arc::new(self.instance.family().clone()),
        })
    }
}

impl OnlinePolicy for SampleThreshold {
    fn name(&self) -> String {
        "sample_threshold".into()
    }

    fn randomness(&self) -> Randomness {
        Randomness::Declared
    }

    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        let samples = draw_samples(&self.instance, chance);
        self.start_with_samples(samples)
    }

    fn start_branches(&self) -> u64 {
        self.instance.dist().joint_support()
    }
}

/// Picks one maximal set uniformly at random up front and accepts its
/// members. Explicit families only.
#[derive(Debug, Clone)]
pub struct RandomPair {
    sets: Arc<Vec<Vec<usize>>>,
    family: Arc<FeasibilityFamily>,
}

#[derive(Clone)]
struct MemberRun {
    members: Vec<usize>,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for MemberRun {
    fn decide(&mut self, obs: &Observation<'_>, _chance: &mut dyn Chance) -> Decision {
        if self.members.contains(&obs.element) && self.family.can_add(obs.selected, obs.element) {
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

pub fn random_pair(instance: &Instance) -> Result<RandomPair> {
    let FeasibilityFamily::Explicit { maximal_sets, .. } = instance.family() else {
        return Err(wrong_family("random_pair", "explicit"));
    };
    Ok(RandomPair { sets: Arc::new(maximal_sets.clone()), family: Arc::new(instance.family().clone()) })
}

impl OnlinePolicy for RandomPair {
    fn name(&self) -> String {
        "random_pair".into()
    }

    fn randomness(&self) -> Randomness {
        Randomness::Declared
    }

    fn start(&self, chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        let members = match self.sets.len() {
            0 => Vec::new(),
            1 => self.sets[0].clone(),
            m => self.sets[chance.choose(&vec![1.0 / m as f64; m])].clone(),
        };
        Box::new(MemberRun { members, family: self.family.clone() })
    }
}

/// Accepts the first arrival exceeding the `gamma`-threshold of the overall
/// maximum, then completes greedily.
#[derive(Debug, Clone)]
pub struct CatchMaxPair {
    gamma: f64,
    thr: RandomizedThreshold,
    family: Arc<FeasibilityFamily>,
}

#[derive(Clone)]
struct CatchRun {
    caught: bool,
    thr: RandomizedThreshold,
    family: Arc<FeasibilityFamily>,
}

impl PolicyRun for CatchRun {
    fn decide(&mut self, obs: &Observation<'_>, chance: &mut dyn Chance) -> Decision {
        if !self.family.can_add(obs.selected, obs.element) {
            return Decision::Reject;
        }
        if self.caught || exceeds(chance, &self.thr, obs.weight) {
            self.caught = true;
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

pub fn catch_max_pair(instance: &Instance, gamma: f64) -> Result<CatchMaxPair> {
    let thr = instance.dist().solve_gamma_threshold(gamma)?;
    Ok(CatchMaxPair { gamma, thr, family: Arc::new(instance.family().clone()) })
}

impl OnlinePolicy for CatchMaxPair {
    fn name(&self) -> String {
        format!("catch_max_pair(gamma={})", self.gamma)
    }

    fn randomness(&self) -> Randomness {
        Randomness::Declared
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(CatchRun { caught: false, thr: self.thr, family: self.family.clone() })
    }

    fn metadata(&self) -> serde_json::Value {
        json!({ "tau": self.thr.tau, "accept_prob_at_atom": self.thr.accept_prob_at_atom })
    }
}
