//! Checkers for the structural facts behind the reductions: self-bounding of
//! the scaled optimum, BLM tail bounds, the event-probability lemma and the
//! intermediate inequalities of the RoE-to-EoR analysis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::evaluation::{evaluate_exact, fold_exact, EvalOptions, Leaf, LeafSink, MetricReport};
use crate::exec::{map_units, Execution};
use crate::feasibility::FeasibilityFamily;
use crate::instances::Instance;
use crate::policies::{roe_to_eor, Branch, ReductionParams, RoeToEor};
use crate::rng::{stream, Lane};

/// Tolerance for the self-bounding conditions.
pub const SELF_BOUNDING_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfBoundingReport {
    pub checked_points: u64,
    pub max_violation_cond1: f64,
    pub max_violation_cond2: f64,
    pub pass: bool,
}

/// Violations of the two self-bounding conditions for `g = f/tau` at `w`,
/// with `g_e` obtained by zeroing coordinate `e`.
pub fn self_bounding_violation_at(family: &FeasibilityFamily, tau: f64, w: &[f64]) -> (f64, f64) {
    let g = family.offline_value(w) / tau;
    let mut v1: f64 = 0.0;
    let mut sum = 0.0;
    let mut x = w.to_vec();
    for e in 0..w.len() {
        let keep = x[e];
        x[e] = 0.0;
        let d = g - family.offline_value(&x) / tau;
        x[e] = keep;
        v1 = v1.max(-d).max(d - 1.0);
        sum += d;
    }
    (v1.max(0.0), (sum - g).max(0.0))
}

/// Checks both conditions at `num_points` uniform points of `[0, tau]^n`.
pub fn check_self_bounding(family: &FeasibilityFamily, tau: f64, num_points: u64, seed: u64) -> Result<SelfBoundingReport> {
    check_self_bounding_with(family, tau, num_points, seed, Execution::default())
}

pub fn check_self_bounding_with(
    family: &FeasibilityFamily,
    tau: f64,
    num_points: u64,
    seed: u64,
    exec: Execution,
) -> Result<SelfBoundingReport> {
    if !(tau > 0.0) {
        return Err(LabError::bad(format!("tau must be positive, got {tau}")));
    }
    let n = family.ground_size();
    let chunk = 256u64;
    let chunks = num_points.div_ceil(chunk) as usize;
    let parts = map_units(exec, chunks, |c| {
        let lo = c as u64 * chunk;
        let hi = (lo + chunk).min(num_points);
        let mut worst = (0.0f64, 0.0f64);
        let mut w = vec![0.0; n];
        for p in lo..hi {
            let mut rng = stream(seed, p, Lane::Aux(1));
            for x in w.iter_mut() {
                *x = rng.gen::<f64>() * tau;
            }
            let (a, b) = self_bounding_violation_at(family, tau, &w);
            worst = (worst.0.max(a), worst.1.max(b));
        }
        worst
    });
    let (v1, v2) = parts.into_iter().fold((0.0f64, 0.0f64), |acc, x| (acc.0.max(x.0), acc.1.max(x.1)));
    Ok(SelfBoundingReport {
        checked_points: num_points,
        max_violation_cond1: v1,
        max_violation_cond2: v2,
        pass: v1 <= SELF_BOUNDING_TOL && v2 <= SELF_BOUNDING_TOL,
    })
}

/// Upper-tail bound `exp(-3 z^2 / (6 E + 2 z))`.
pub fn blm_upper(mean: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 1.0;
    }
    (-3.0 * z * z / (6.0 * mean + 2.0 * z)).exp()
}

/// Lower-tail bound `exp(-z^2 / (2 E))`.
pub fn blm_lower(mean: f64, z: f64) -> f64 {
    if z <= 0.0 || mean <= 0.0 {
        return 1.0;
    }
    (-z * z / (2.0 * mean)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BlmRow {
    pub z: f64,
    pub upper_empirical: f64,
    pub upper_bound: f64,
    pub upper_se: f64,
    pub upper_pass: bool,
    /// `None` when `z >= E[g]`, where the lower tail is empty.
    pub lower_empirical: Option<f64>,
    pub lower_bound: Option<f64>,
    pub lower_se: Option<f64>,
    pub lower_pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlmTable {
    pub tau: f64,
    /// Exact `E[g]` for `g = f(w)/tau` under the truncated law.
    pub mean_g: f64,
    pub trials: u64,
    pub rows: Vec<BlmRow>,
}

impl BlmTable {
    pub fn pass(&self) -> bool {
        self.rows.iter().all(|r| r.upper_pass && r.lower_pass)
    }
}

/// Number of binomial standard errors allowed above a bound.
pub const BLM_SLACK_SE: f64 = 4.0;

/// Default grid `{0.25, 0.5, 1, 1.5, 2} * sqrt(E[g])`.
pub fn default_z_grid(mean_g: f64) -> Vec<f64> {
    [0.25, 0.5, 1.0, 1.5, 2.0].iter().map(|m| m * mean_g.sqrt()).collect()
}

/// Empirical tails of `g = f(w)/tau` under the law truncated at the
/// `gamma`-threshold, against the BLM bounds. An empty `z_grid` selects
/// [`default_z_grid`].
pub fn blm_tail_check(instance: &Instance, gamma: f64, z_grid: &[f64], trials: u64, seed: u64) -> Result<BlmTable> {
    if trials == 0 {
        return Err(LabError::bad("blm check needs trials"));
    }
    let thr = instance.dist().solve_gamma_threshold(gamma)?;
    if !(thr.tau > 0.0) {
        return Err(LabError::bad("threshold is 0; g = f/tau is undefined"));
    }
    let truncated = instance.dist().truncate(&thr)?;
    let family = instance.family();
    let mean_g = family.expected_offline_value(&truncated, seed).value / thr.tau;
    let grid = if z_grid.is_empty() { default_z_grid(mean_g) } else { z_grid.to_vec() };
    let chunk = 1024u64;
    let chunks = trials.div_ceil(chunk) as usize;
    let samples: Vec<f64> = map_units(Execution::default(), chunks, |c| {
        let lo = c as u64 * chunk;
        let hi = (lo + chunk).min(trials);
        let mut w = Vec::new();
        (lo..hi)
            .map(|t| {
                truncated.sample_into(&mut stream(seed, t, Lane::Weights), &mut w);
                family.offline_value(&w) / thr.tau
            })
            .collect::<Vec<_>>()
    })
    .into_iter()
    .flatten()
    .collect();
    let nt = trials as f64;
    let se = |p: f64| (p * (1.0 - p) / nt).sqrt();
    let eps = 1e-12 * mean_g.max(1.0);
    let rows = grid
        .iter()
        .map(|&z| {
            let up = samples.iter().filter(|&&g| g >= mean_g + z - eps).count() as f64 / nt;
            let ub = blm_upper(mean_g, z);
            let (lo_emp, lo_bound, lo_se, lo_pass) = if z < mean_g {
                let lo = samples.iter().filter(|&&g| g <= mean_g - z + eps).count() as f64 / nt;
                let lb = blm_lower(mean_g, z);
                (Some(lo), Some(lb), Some(se(lo)), lo <= lb + BLM_SLACK_SE * se(lo))
            } else {
                (None, None, None, true)
            };
            BlmRow {
                z,
                upper_empirical: up,
                upper_bound: ub,
                upper_se: se(up),
                upper_pass: up <= ub + BLM_SLACK_SE * se(up),
                lower_empirical: lo_emp,
                lower_bound: lo_bound,
                lower_se: lo_se,
                lower_pass: lo_pass,
            }
        })
        .collect();
    Ok(BlmTable { tau: thr.tau, mean_g, trials, rows })
}

/// Each quantity of the RoE-to-EoR analysis for one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub label: String,
    pub subroutine: String,
    pub params: ReductionParams,
    pub tau: f64,
    pub accept_prob_at_atom: f64,
    /// `W`, the expected optimum under the truncated law.
    pub core_value: f64,
    pub branch: Branch,
    pub constraint_satisfied: bool,
    pub p_core: f64,
    pub p_tail: f64,
    /// `Pr[f > delta W | core]`.
    pub p_large_given_core: f64,
    /// `alpha / k`.
    pub large_bound: f64,
    /// `E[a | f <= delta W, core]` for the subroutine.
    pub small_value: f64,
    /// `(1 - (delta - 1)/k) alpha W`.
    pub small_rhs: f64,
    pub eor: f64,
    pub superstar_bound: f64,
    pub combinatorial_bound: f64,
    pub guarantee: f64,
    pub alpha_over_12: f64,
    /// The two conditional claims; checked only on the combinatorial branch.
    pub conditional_claims_hold: bool,
    /// The active branch's lemma bound holds.
    pub branch_bound_holds: bool,
    pub guarantee_holds: bool,
}

#[derive(Default)]
struct CoreSplit {
    cut: f64,
    mass: f64,
    large: f64,
    small: f64,
    small_value: f64,
}

impl LeafSink for CoreSplit {
    fn leaf(&mut self, leaf: &Leaf<'_>) {
        self.mass += leaf.prob;
        if leaf.opt > self.cut {
            self.large += leaf.prob;
        } else {
            self.small += leaf.prob;
            self.small_value += leaf.prob * leaf.value;
        }
    }

    fn merge(&mut self, o: Self) {
        self.mass += o.mass;
        self.large += o.large;
        self.small += o.small;
        self.small_value += o.small_value;
    }
}

/// Builds the RoE-to-EoR composite around `sub_spec`, evaluates it exactly
/// and records every intermediate inequality with its slack.
pub fn reduction_audit(instance: &Instance, sub_spec: &str, params: ReductionParams, seed: u64) -> Result<AuditRecord> {
    let composite = roe_to_eor(instance, sub_spec, params, None, seed)?;
    audit_composite(instance, &composite)
}

pub fn audit_composite(instance: &Instance, composite: &RoeToEor) -> Result<AuditRecord> {
    let p = *composite.params();
    let thr = composite.threshold();
    let w = composite.core_value().value;
    let cut = p.delta * w;
    let split = fold_exact(
        composite.truncated(),
        composite.subroutine().as_ref(),
        &EvalOptions::default(),
        1.0,
        || CoreSplit { cut, ..Default::default() },
    )?;
    let p_large = split.large / split.mass;
    let small_value = if split.small > 0.0 { split.small_value / split.small } else { 0.0 };
    let small_rhs = (1.0 - (p.delta - 1.0) / p.k) * p.alpha * w;
    let report: MetricReport = evaluate_exact(instance, composite)?;
    let tol = 1e-9;
    let conditional_claims_hold = composite.branch() == Branch::Superstar
        || (p_large <= p.alpha / p.k + tol && small_value >= small_rhs - tol * w.max(1.0));
    let branch_bound_holds = match composite.branch() {
        Branch::Superstar => report.eor >= p.superstar_bound() - tol,
        Branch::Combinatorial => report.eor >= p.combinatorial_bound() - tol,
    };
    Ok(AuditRecord {
        label: instance.label().to_string(),
        subroutine: composite.subroutine().name(),
        params: p,
        tau: thr.tau,
        accept_prob_at_atom: thr.accept_prob_at_atom,
        core_value: w,
        branch: composite.branch(),
        constraint_satisfied: p.satisfies_constraint(),
        p_core: instance.dist().core_probability(&thr),
        p_tail: instance.dist().tail_probability(&thr),
        p_large_given_core: p_large,
        large_bound: p.alpha / p.k,
        small_value,
        small_rhs,
        eor: report.eor,
        superstar_bound: p.superstar_bound(),
        combinatorial_bound: p.combinatorial_bound(),
        guarantee: p.guarantee(),
        alpha_over_12: p.alpha / 12.0,
        conditional_claims_hold,
        branch_bound_holds,
        guarantee_holds: report.eor >= p.guarantee() - tol,
    })
}

/// `(alpha, Pr[ratio >= alpha/2])` from an exact report; the claim is that
/// the probability is at least `alpha / 2`.
pub fn imply_claim(report: &MetricReport) -> (f64, f64) {
    let alpha = report.eor;
    (alpha, report.prob_ratio_at_least(alpha / 2.0))
}

/// `sum (1 - p_i)/p_i - n (1 - p)/p` for the geometric mean `p`; never
/// negative.
pub fn am_gm_gap(ps: &[f64]) -> f64 {
    let n = ps.len() as f64;
    let g = (ps.iter().map(|p| p.ln()).sum::<f64>() / n).exp();
    ps.iter().map(|p| (1.0 - p) / p).sum::<f64>() - n * (1.0 - g) / g
}

/// `f(w) - f(w_bar) - sum_e w_e 1[w_e > tau]`, where `w_bar` agrees with `w`
/// below the threshold; never positive.
pub fn opts_claim_gap(family: &FeasibilityFamily, w: &[f64], w_bar: &[f64], tau: f64) -> f64 {
    let stars: f64 = w.iter().filter(|&&x| x > tau).sum();
    family.offline_value(w) - family.offline_value(w_bar) - stars
}
