//! Optimal deterministic online policies by backward induction over the
//! realization tree.

use std::collections::HashSet;
use std::sync::Arc;

use serde_json::json;

use super::{Chance, Decision, Observation, OnlinePolicy, PolicyRun};
use crate::error::{LabError, Result};
use crate::evaluation::ratio;
use crate::feasibility::FeasibilityFamily;
use crate::instances::Instance;
use crate::matches_value;

/// Largest realization tree the solver accepts.
pub const DP_LEAF_CAP: u64 = 1_000_000;

/// Largest number of (prefix, selection) states visited.
pub const DP_STATE_CAP: u64 = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    /// Maximize `E[a]`, hence `E[a]/E[f]`.
    Roe,
    /// Maximize `E[a/f]`.
    Eor,
    /// Maximize `Pr[a = f]`.
    Pbm,
}

impl Objective {
    pub fn as_str(self) -> &'static str {
        match self {
            Objective::Roe => "roe",
            Objective::Eor => "eor",
            Objective::Pbm => "pbm",
        }
    }

    fn terminal(self, a: f64, f: f64) -> f64 {
        match self {
            Objective::Roe => a,
            Objective::Eor => ratio(a, f),
            Objective::Pbm => f64::from(u8::from(matches_value(a, f))),
        }
    }
}

#[derive(Debug)]
struct Table {
    order: Vec<usize>,
    /// Support values of each element, indexed by element.
    values: Vec<Vec<f64>>,
    /// Accept states keyed by `(step, prefix code including the arrival, mask before)`.
    accept: HashSet<(u32, u64, u64)>,
}

/// The optimal policy for one objective on one instance.
#[derive(Debug, Clone)]
pub struct OptimalPolicy {
    objective: Objective,
    value: f64,
    states: u64,
    table: Arc<Table>,
}

impl OptimalPolicy {
    /// Optimal objective value: `E[a]`, `E[a/f]` or `Pr[a = f]`.
    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn objective(&self) -> Objective {
        self.objective
    }
}

struct Solver<'a> {
    family: &'a FeasibilityFamily,
    order: &'a [usize],
    atoms: Vec<&'a [(f64, f64)]>,
    objective: Objective,
    accept: HashSet<(u32, u64, u64)>,
    states: u64,
    w: Vec<f64>,
    sel: Vec<usize>,
}

impl Solver<'_> {
    fn solve(&mut self, t: usize, code: u64, mask: u64) -> Result<f64> {
        self.states += 1;
        if self.states > DP_STATE_CAP {
            return Err(LabError::TooLarge { what: "optimal policy states".into(), cap: DP_STATE_CAP });
        }
        if t == self.order.len() {
            let f = self.family.offline_value(&self.w);
            let a: f64 = self.sel.iter().map(|&e| self.w[e]).sum();
            return Ok(self.objective.terminal(a, f));
        }
        let e = self.order[t];
        let atoms = self.atoms[e];
        let radix = atoms.len() as u64;
        let feasible = self.family.can_add(&self.sel, e);
        let mut total = 0.0;
        for (i, &(v, p)) in atoms.iter().enumerate() {
            self.w[e] = v;
            let next = code * radix + i as u64;
            let reject = self.solve(t + 1, next, mask)?;
            let mut best = reject;
            if feasible {
                self.sel.push(e);
                let accept = self.solve(t + 1, next, mask | (1u64 << e))?;
                self.sel.pop();
                if accept > reject + 1e-12 * reject.abs().max(1.0) {
                    self.accept.insert((t as u32, next, mask));
                    best = accept;
                }
            }
            total += p * best;
        }
        Ok(total)
    }
}

/// Solves for the optimal deterministic policy under `objective`.
pub fn optimal_policy(instance: &Instance, objective: Objective) -> Result<OptimalPolicy> {
    let n = instance.ground_size();
    if n > 64 {
        return Err(LabError::TooLarge { what: format!("{n} elements for the optimal-policy solver"), cap: 64 });
    }
    let leaves = instance.dist().joint_support();
    if leaves > DP_LEAF_CAP {
        return Err(LabError::TooLarge { what: format!("{leaves} realizations"), cap: DP_LEAF_CAP });
    }
    let mut solver = Solver {
        family: instance.family(),
        order: instance.arrival_order(),
        atoms: instance.dist().elements().iter().map(|d| d.atoms()).collect(),
        objective,
        accept: HashSet::new(),
        states: 0,
        w: vec![0.0; n],
        sel: Vec::new(),
    };
    let value = solver.solve(0, 0, 0)?;
    let table = Table {
        order: instance.arrival_order().to_vec(),
        values: instance.dist().elements().iter().map(|d| d.values().collect()).collect(),
        accept: solver.accept,
    };
    Ok(OptimalPolicy { objective, value, states: solver.states, table: Arc::new(table) })
}

#[derive(Clone)]
struct OptimalRun {
    table: Arc<Table>,
    code: Option<u64>,
    mask: u64,
}

impl PolicyRun for OptimalRun {
    fn decide(&mut self, obs: &Observation<'_>, _chance: &mut dyn Chance) -> Decision {
        let t = obs.step;
        let e = obs.element;
        // Off-table observations (other arrival orders, foreign weights) fall back to rejecting.
        let Some(code) = self.code else { return Decision::Reject };
        if self.table.order.get(t) != Some(&e) {
            self.code = None;
            return Decision::Reject;
        }
        let values = &self.table.values[e];
        let Ok(i) = values.binary_search_by(|v| v.total_cmp(&obs.weight)) else {
            self.code = None;
            return Decision::Reject;
        };
        let next = code * values.len() as u64 + i as u64;
        self.code = Some(next);
        if self.table.accept.contains(&(t as u32, next, self.mask)) {
            self.mask |= 1u64 << e;
            Decision::Accept
        } else {
            Decision::Reject
        }
    }

    fn box_clone(&self) -> Box<dyn PolicyRun> {
        Box::new(self.clone())
    }
}

impl OnlinePolicy for OptimalPolicy {
    fn name(&self) -> String {
        format!("optimal_{}", self.objective.as_str())
    }

    fn start(&self, _chance: &mut dyn Chance) -> Box<dyn PolicyRun> {
        Box::new(OptimalRun { table: self.table.clone(), code: Some(0), mask: 0 })
    }

    fn metadata(&self) -> serde_json::Value {
        json!({ "objective": self.objective.as_str(), "value": self.value, "states": self.states })
    }
}
