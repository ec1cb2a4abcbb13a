//! Brute-force reference computations, deliberately independent of the fast
//! paths they are used to check.

use crate::distributions::ProductDistribution;
use crate::error::{LabError, Result};
use crate::evaluation::ratio;
use crate::feasibility::FeasibilityFamily;
use crate::instances::Instance;
use crate::matches_value;
use crate::policies::Objective;

/// `max w(S)` over all feasible `S`, scanning every subset (`n <= 20`).
pub fn brute_force_optimum(family: &FeasibilityFamily, w: &[f64]) -> f64 {
    let n = w.len();
    assert!(n <= 20, "brute force is limited to 20 elements");
    let mut best = 0.0f64;
    for mask in 0u32..(1u32 << n) {
        let set: Vec<usize> = (0..n).filter(|&e| mask >> e & 1 == 1).collect();
        if family.is_feasible(&set).unwrap_or(false) {
            best = best.max(set.iter().map(|&e| w[e]).sum());
        }
    }
    best
}

/// All feasible sets (`n <= 20`).
pub fn feasible_sets(family: &FeasibilityFamily) -> Vec<Vec<usize>> {
    let n = family.ground_size();
    assert!(n <= 20, "brute force is limited to 20 elements");
    (0u32..(1u32 << n))
        .map(|mask| (0..n).filter(|&e| mask >> e & 1 == 1).collect::<Vec<_>>())
        .filter(|s| family.is_feasible(s).unwrap_or(false))
        .collect()
}

/// `E[max w]` by summing over every joint outcome.
pub fn expected_max_enumerated(product: &ProductDistribution) -> f64 {
    let mut total = 0.0;
    product.for_each_outcome(|w, p| total += p * w.iter().copied().fold(0.0, f64::max));
    total
}

/// Every joint outcome as `(weights, prob)`, element 0 slowest.
pub fn outcomes(product: &ProductDistribution) -> Vec<(Vec<f64>, f64)> {
    let mut out = Vec::new();
    product.for_each_outcome(|w, p| out.push((w.to_vec(), p)));
    out
}

/// Best objective value over all deterministic online policies, by
/// enumerating every map from observed prefixes to accept/reject. Only for
/// tiny instances (at most 20 decision points).
pub fn exhaustive_best(instance: &Instance, objective: Objective) -> Result<f64> {
    let order = instance.arrival_order();
    let sizes: Vec<usize> = order.iter().map(|&e| instance.dist().get(e).len()).collect();
    // decision point index of (step, prefix-with-current code)
    let mut offsets = Vec::with_capacity(order.len());
    let mut count = 0usize;
    let mut width = 1usize;
    for &s in &sizes {
        width *= s;
        offsets.push(count);
        count += width;
    }
    if count > 20 {
        return Err(LabError::TooLarge { what: format!("{count} decision points"), cap: 20 });
    }
    let outs = outcomes(instance.dist());
    let family = instance.family();
    let mut best = f64::NEG_INFINITY;
    for policy in 0u64..(1u64 << count) {
        let mut total = 0.0;
        for (w, p) in &outs {
            let mut selected: Vec<usize> = Vec::new();
            let mut code = 0usize;
            for (t, &e) in order.iter().enumerate() {
                let atom = instance.dist().get(e).atom_index(w[e]).expect("weight is an atom");
                code = code * sizes[t] + atom;
                let accept = policy >> (offsets[t] + code) & 1 == 1;
                if accept && family.can_add(&selected, e) {
                    selected.push(e);
                }
            }
            let a: f64 = selected.iter().map(|&e| w[e]).sum();
            let f = brute_force_optimum(family, w);
            total += p * match objective {
                Objective::Roe => a,
                Objective::Eor => ratio(a, f),
                Objective::Pbm => f64::from(u8::from(matches_value(a, f))),
            };
        }
        best = best.max(total);
    }
    Ok(best)
}

/// Win probability of the wait-`r` rule over all orders of `n` distinct
/// values, by direct permutation enumeration.
pub fn secretary_win_by_permutation(n: usize, r: usize) -> f64 {
    let perms = crate::evaluation::permutations(n);
    let wins = perms
        .iter()
        .filter(|perm| {
            let bar = perm[..r].iter().copied().max();
            let pick = perm[r..].iter().copied().find(|&v| bar.map_or(true, |b| v > b));
            pick == Some(n - 1)
        })
        .count();
    wins as f64 / perms.len() as f64
}

/// `p_r = (r/n) sum_{i=r}^{n-1} 1/i`, with `p_0 = 1/n`.
pub fn secretary_formula(n: usize, r: usize) -> f64 {
    if r == 0 {
        return 1.0 / n as f64;
    }
    r as f64 / n as f64 * (r..n).map(|i| 1.0 / i as f64).sum::<f64>()
}

/// `rho_i = ((n - i + 1)/n) (1 - 1/n)^(n - i)`; `rho_1 = (1 - 1/n)^(n-1)`.
pub fn mpower_rho(n: usize, i: usize) -> f64 {
    let nf = n as f64;
    (nf - i as f64 + 1.0) / nf * (1.0 - 1.0 / nf).powi((n - i) as i32)
}
