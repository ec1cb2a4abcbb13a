//! Exact and Monte Carlo evaluation of a policy against the offline optimum.
//!
//! Exact mode walks the full realization tree, branching over every atom of
//! every arriving weight and over every outcome of the policy's declared
//! randomness. Monte Carlo mode runs seeded trials in fixed-size chunks whose
//! partial sums are merged in chunk order, so results do not depend on the
//! execution back end.

use std::collections::HashMap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Mutex;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::distributions::{ProductDistribution, RandomizedThreshold};
use crate::error::{LabError, Result};
use crate::exec::{map_units, Execution};
use crate::feasibility::{Estimate, FeasibilityFamily};
use crate::instances::Instance;
use crate::policies::{Chance, Decision, Observation, OnlinePolicy, PolicyRun, Randomness, RngChance};
use crate::rng::{stream, Lane};
use crate::{matches_value, PROB_TOL};

/// Realization-tree leaves allowed in exact mode.
pub const EXACT_LEAF_CAP: u64 = 10_000_000;

/// Trials per Monte Carlo work unit.
pub const MC_CHUNK: u64 = 1024;

/// Trials used when an exact evaluation is out of reach.
pub const FALLBACK_TRIALS: u64 = 100_000;

/// `a/f`, with 1 when the optimum is 0 or the two agree.
pub fn ratio(a: f64, f: f64) -> f64 {
    if f <= 0.0 || matches_value(a, f) {
        1.0
    } else {
        a / f
    }
}

/// `f/a`, infinite when nothing was gained against a positive optimum.
pub fn inverse_ratio(a: f64, f: f64) -> f64 {
    if f <= 0.0 || matches_value(a, f) {
        1.0
    } else if a <= 0.0 {
        f64::INFINITY
    } else {
        f / a
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Mode {
    Exact,
    MonteCarlo { trials: u64, seed: u64 },
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Exact => write!(f, "exact"),
            Mode::MonteCarlo { trials, seed } => write!(f, "mc(trials={trials};seed={seed})"),
        }
    }
}

/// 95% normal-approximation half-widths (Monte Carlo only).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Halfwidths {
    pub roe: f64,
    pub eor: f64,
    #[serde(with = "extended_float")]
    pub eoir: f64,
    pub pbm: f64,
    pub pbm_p: f64,
    pub expected_value: f64,
    pub expected_opt: f64,
}

/// Every performance measure of one (instance, policy) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub label: String,
    pub policy: String,
    pub mode: Mode,
    pub roe: f64,
    pub eor: f64,
    #[serde(with = "extended_float")]
    pub eoir: f64,
    pub pbm: f64,
    pub pbm_p: f64,
    pub expected_value: f64,
    pub expected_opt: f64,
    pub utility_cap: Option<f64>,
    pub expected_utility: Option<f64>,
    /// Distinct values of `a/f` with their probabilities (empirical
    /// frequencies in Monte Carlo mode), sorted by value.
    pub ratio_distribution: Vec<(f64, f64)>,
    pub ci_halfwidth: Option<Halfwidths>,
}

/// Serializes infinities as the strings `"inf"` / `"-inf"`.
mod extended_float {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("nan")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(x) => Ok(x),
            Repr::Text(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                _ => Err(serde::de::Error::custom(format!("bad float {t:?}"))),
            },
        }
    }
}

impl MetricReport {
    pub const CSV_HEADER: &'static str =
        "label,policy,mode,roe,eor,eoir,pbm,pbm_p,ev,eopt,ci_roe,ci_eor,ci_eoir,ci_pbm,ci_pbm_p,ci_ev,ci_eopt,util";

    pub fn csv_row(&self) -> String {
        let ci = |f: fn(&Halfwidths) -> f64| self.ci_halfwidth.as_ref().map(|h| f(h).to_string()).unwrap_or_default();
        let fields = [
            csv_quote(&self.label),
            csv_quote(&self.policy),
            self.mode.to_string(),
            self.roe.to_string(),
            self.eor.to_string(),
            self.eoir.to_string(),
            self.pbm.to_string(),
            self.pbm_p.to_string(),
            self.expected_value.to_string(),
            self.expected_opt.to_string(),
            ci(|h| h.roe),
            ci(|h| h.eor),
            ci(|h| h.eoir),
            ci(|h| h.pbm),
            ci(|h| h.pbm_p),
            ci(|h| h.expected_value),
            ci(|h| h.expected_opt),
            self.expected_utility.map(|u| u.to_string()).unwrap_or_default(),
        ];
        fields.join(",")
    }

    /// `Pr[a/f >= x]` read off the ratio distribution.
    pub fn prob_ratio_at_least(&self, x: f64) -> f64 {
        self.ratio_distribution.iter().filter(|r| r.0 >= x).map(|r| r.1).sum()
    }
}

pub fn csv_quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Evaluation knobs.
#[derive(Debug, Clone, Copy)]
pub struct EvalOptions {
    pub exec: Execution,
    /// Cap for `E[min(a, cap)]`; defaults to the instance's own cap.
    pub utility_cap: Option<f64>,
    pub leaf_cap: u64,
    /// Monte Carlo only: draw a fresh uniform arrival order per trial.
    pub random_order: bool,
    /// Exact mode: use the closed form for single-choice threshold rules.
    pub structured: bool,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { exec: Execution::default(), utility_cap: None, leaf_cap: EXACT_LEAF_CAP, random_order: false, structured: true }
    }
}

/// One complete realization reached by the exact walk.
pub struct Leaf<'a> {
    pub prob: f64,
    pub weights: &'a [f64],
    pub selected: &'a [usize],
    pub value: f64,
    pub opt_set: &'a [usize],
    pub opt: f64,
}

/// Accumulates leaves; partial sinks are merged in a fixed order.
pub trait LeafSink: Send + Sized {
    fn leaf(&mut self, leaf: &Leaf<'_>);
    fn merge(&mut self, other: Self);
}

/// Makes chance draws follow a script and records the first unscripted one.
struct ScriptedChance<'a> {
    script: &'a [usize],
    pos: usize,
    pending: Option<Vec<f64>>,
}

impl Chance for ScriptedChance<'_> {
    fn choose(&mut self, probs: &[f64]) -> usize {
        if let Some(&i) = self.script.get(self.pos) {
            self.pos += 1;
            return i;
        }
        if self.pending.is_none() {
            self.pending = Some(probs.to_vec());
        }
        0
    }
}

const MAX_DRAWS_PER_CALL: usize = 4096;

/// Runs `f` under every outcome of the chance draws it makes, returning
/// `(result, probability)` pairs.
fn enumerate_chance<T>(mut f: impl FnMut(&mut dyn Chance) -> T) -> Vec<(T, f64)> {
    let mut out = Vec::new();
    let mut work: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 1.0)];
    while let Some((script, prob)) = work.pop() {
        let mut ch = ScriptedChance { script: &script, pos: 0, pending: None };
        let result = f(&mut ch);
        match ch.pending {
            None => out.push((result, prob)),
            Some(probs) => {
                assert!(script.len() < MAX_DRAWS_PER_CALL, "policy makes unbounded chance draws");
                for (i, &p) in probs.iter().enumerate().rev() {
                    if p > 0.0 {
                        let mut s = script.clone();
                        s.push(i);
                        work.push((s, prob * p));
                    }
                }
            }
        }
    }
    out.reverse();
    out
}

struct Node {
    step: usize,
    run: Box<dyn PolicyRun>,
    selected: Vec<usize>,
    prefix: Vec<(usize, f64)>,
    weights: Vec<f64>,
    prob: f64,
}

struct Walker<'a> {
    instance: &'a Instance,
    policy_name: String,
    leaves: &'a AtomicU64,
    abort: &'a AtomicBool,
    cap: u64,
}

impl Walker<'_> {
    /// Children of `node` after the arrival at `node.step`.
    fn children(&self, node: &Node) -> Result<Vec<Node>> {
        let e = self.instance.arrival_order()[node.step];
        let family = self.instance.family();
        let mut out = Vec::new();
        for &(v, p) in self.instance.dist().get(e).atoms() {
            let obs = Observation { step: node.step, element: e, weight: v, selected: &node.selected, prefix: &node.prefix };
            let outcomes = enumerate_chance(|ch| {
                let mut run = node.run.box_clone();
                let d = run.decide(&obs, ch);
                (run, d)
            });
            for ((run, d), q) in outcomes {
                let mut selected = node.selected.clone();
                if d == Decision::Accept {
                    if !family.can_add(&selected, e) {
                        return Err(LabError::InfeasibleAccept { policy: self.policy_name.clone(), element: e });
                    }
                    selected.push(e);
                }
                let mut prefix = node.prefix.clone();
                prefix.push((e, v));
                let mut weights = node.weights.clone();
                weights[e] = v;
                out.push(Node { step: node.step + 1, run, selected, prefix, weights, prob: node.prob * p * q });
            }
        }
        Ok(out)
    }

    fn walk<S: LeafSink>(&self, node: Node, sink: &mut S) -> Result<()> {
        if self.abort.load(Ordering::Relaxed) {
            return Ok(());
        }
        if node.step == self.instance.ground_size() {
            if self.leaves.fetch_add(1, Ordering::Relaxed) >= self.cap {
                self.abort.store(true, Ordering::Relaxed);
                return Ok(());
            }
            let (opt_set, opt) = self.instance.family().offline_optimum(&node.weights);
            let value = node.selected.iter().map(|&e| node.weights[e]).sum();
            sink.leaf(&Leaf {
                prob: node.prob,
                weights: &node.weights,
                selected: &node.selected,
                value,
                opt_set: &opt_set,
                opt,
            });
            return Ok(());
        }
        for child in self.children(&node)? {
            self.walk(child, sink)?;
        }
        Ok(())
    }
}

/// Walks the realization tree of `policy` on `instance`, feeding every leaf
/// to a sink made by `make`. `scale` multiplies every leaf probability.
pub fn fold_exact<S, M>(instance: &Instance, policy: &dyn OnlinePolicy, opts: &EvalOptions, scale: f64, make: M) -> Result<S>
where
    S: LeafSink,
    M: Fn() -> S + Sync,
{
    if policy.randomness() == Randomness::Undeclared {
        return Err(LabError::UndeclaredRandomness(policy.name()));
    }
    let support = instance.dist().joint_support();
    if support.saturating_mul(policy.start_branches()) > opts.leaf_cap {
        return Err(LabError::TooLarge {
            what: format!("{support} weight realizations times {} start outcomes", policy.start_branches()),
            cap: opts.leaf_cap,
        });
    }
    let leaves = AtomicU64::new(0);
    let abort = AtomicBool::new(false);
    let walker = Walker { instance, policy_name: policy.name(), leaves: &leaves, abort: &abort, cap: opts.leaf_cap };
    let n = instance.ground_size();
    let mut frontier: Vec<Node> = enumerate_chance(|ch| policy.start(ch))
        .into_iter()
        .map(|(run, q)| Node {
            step: 0,
            run,
            selected: Vec::new(),
            prefix: Vec::with_capacity(n),
            weights: vec![0.0; n],
            prob: scale * q,
        })
        .collect();
    // Split the top of the tree into enough independent tasks.
    while frontier.len() < 64 && frontier.iter().all(|nd| nd.step < n) {
        let mut next = Vec::new();
        for node in &frontier {
            next.extend(walker.children(node)?);
        }
        frontier = next;
    }
    let tasks: Vec<Mutex<Option<Node>>> = frontier.into_iter().map(|nd| Mutex::new(Some(nd))).collect();
    let parts = map_units(opts.exec, tasks.len(), |i| {
        let node = tasks[i].lock().expect("task lock").take().expect("task taken once");
        let mut sink = make();
        walker.walk(node, &mut sink).map(|_| sink)
    });
    if abort.load(Ordering::Relaxed) {
        return Err(LabError::TooLarge { what: "realization tree including policy randomness".into(), cap: opts.leaf_cap });
    }
    let mut total = make();
    for part in parts {
        total.merge(part?);
    }
    Ok(total)
}

/// Exact accumulator for all metrics.
#[derive(Debug, Clone)]
pub struct MetricSink {
    mass: f64,
    value: f64,
    opt: f64,
    eor: f64,
    eoir: f64,
    pbm: f64,
    util: f64,
    cap: Option<f64>,
    in_opt: Vec<f64>,
    hit: Vec<f64>,
    ratios: HashMap<u64, f64>,
}

impl MetricSink {
    pub fn new(n: usize, cap: Option<f64>) -> Self {
        Self {
            mass: 0.0,
            value: 0.0,
            opt: 0.0,
            eor: 0.0,
            eoir: 0.0,
            pbm: 0.0,
            util: 0.0,
            cap,
            in_opt: vec![0.0; n],
            hit: vec![0.0; n],
            ratios: HashMap::new(),
        }
    }

    fn add(&mut self, prob: f64, a: f64, f: f64) {
        let r = ratio(a, f);
        self.mass += prob;
        self.value += prob * a;
        self.opt += prob * f;
        self.eor += prob * r;
        let ir = inverse_ratio(a, f);
        if prob > 0.0 {
            self.eoir += prob * ir;
        }
        if matches_value(a, f) {
            self.pbm += prob;
        }
        if let Some(c) = self.cap {
            self.util += prob * a.min(c);
        }
        *self.ratios.entry(r.to_bits()).or_insert(0.0) += prob;
    }

    fn finish(self, label: &str, policy: String) -> MetricReport {
        let m = self.mass;
        let value = self.value / m;
        let opt = self.opt / m;
        let pbm_p = self
            .in_opt
            .iter()
            .zip(&self.hit)
            .filter(|(o, _)| **o > 0.0)
            .map(|(o, h)| (h / o).min(1.0))
            .fold(1.0, f64::min);
        let mut dist: Vec<(f64, f64)> = self.ratios.into_iter().map(|(b, p)| (f64::from_bits(b), p / m)).collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        MetricReport {
            label: label.to_string(),
            policy,
            mode: Mode::Exact,
            roe: if opt > 0.0 { value / opt } else { 1.0 },
            eor: self.eor / m,
            eoir: self.eoir / m,
            pbm: self.pbm / m,
            pbm_p,
            expected_value: value,
            expected_opt: opt,
            utility_cap: self.cap,
            expected_utility: self.cap.map(|_| self.util / m),
            ratio_distribution: dist,
            ci_halfwidth: None,
        }
    }
}

impl LeafSink for MetricSink {
    fn leaf(&mut self, leaf: &Leaf<'_>) {
        self.add(leaf.prob, leaf.value, leaf.opt);
        for &e in leaf.opt_set {
            self.in_opt[e] += leaf.prob;
            if leaf.selected.contains(&e) {
                self.hit[e] += leaf.prob;
            }
        }
    }

    fn merge(&mut self, other: Self) {
        self.mass += other.mass;
        self.value += other.value;
        self.opt += other.opt;
        self.eor += other.eor;
        self.eoir += other.eoir;
        self.pbm += other.pbm;
        self.util += other.util;
        for (a, b) in self.in_opt.iter_mut().zip(other.in_opt) {
            *a += b;
        }
        for (a, b) in self.hit.iter_mut().zip(other.hit) {
            *a += b;
        }
        for (k, p) in other.ratios {
            *self.ratios.entry(k).or_insert(0.0) += p;
        }
    }
}

fn cap_for(instance: &Instance, opts: &EvalOptions) -> Option<f64> {
    opts.utility_cap.or_else(|| instance.utility_cap())
}

/// Exact metrics with default options.
pub fn evaluate_exact(instance: &Instance, policy: &dyn OnlinePolicy) -> Result<MetricReport> {
    evaluate_exact_with(instance, policy, &EvalOptions::default())
}

pub fn evaluate_exact_with(instance: &Instance, policy: &dyn OnlinePolicy, opts: &EvalOptions) -> Result<MetricReport> {
    let cap = cap_for(instance, opts);
    if opts.structured && matches!(instance.family(), FeasibilityFamily::SingleChoice { .. }) {
        if let Some(thr) = policy.single_choice_threshold() {
            return Ok(single_choice_threshold_report(instance, &thr, cap).finish(instance.label(), policy.name()));
        }
    }
    let n = instance.ground_size();
    let sink = fold_exact(instance, policy, opts, 1.0, || MetricSink::new(n, cap))?;
    Ok(sink.finish(instance.label(), policy.name()))
}

/// Exact metrics averaged over all `n!` arrival orders (`n <= 9`).
pub fn evaluate_exact_random_order(instance: &Instance, policy: &dyn OnlinePolicy, opts: &EvalOptions) -> Result<MetricReport> {
    let n = instance.ground_size();
    if n > 9 {
        return Err(LabError::TooLarge { what: format!("{n}! arrival orders"), cap: 362_880 });
    }
    let cap = cap_for(instance, opts);
    let perms = permutations(n);
    let scale = 1.0 / perms.len() as f64;
    let mut total = MetricSink::new(n, cap);
    for perm in perms {
        let inst = instance.reordered(perm)?;
        total.merge(fold_exact(&inst, policy, opts, scale, || MetricSink::new(n, cap))?);
    }
    Ok(total.finish(instance.label(), format!("{} [uniform order]", policy.name())))
}

/// All permutations of `0..n` in lexicographic order.
pub fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur: Vec<usize> = (0..n).collect();
    loop {
        out.push(cur.clone());
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| cur[i - 1] < cur[i]) else { break };
        let j = (i..n).rev().find(|&j| cur[j] > cur[i - 1]).expect("successor exists");
        cur.swap(i - 1, j);
        cur[i..].reverse();
    }
    out
}

/// Closed form for "accept the first arrival exceeding `thr`" on a
/// single-choice instance, without enumerating the product space.
fn single_choice_threshold_report(instance: &Instance, thr: &RandomizedThreshold, cap: Option<f64>) -> MetricSink {
    let dist = instance.dist();
    let order = instance.arrival_order();
    let n = order.len();
    let union = dist.support_union();
    let below: Vec<f64> = dist.elements().iter().map(|d| thr.below_prob(d)).collect();
    let mut sink = MetricSink::new(n, cap);

    // Law of each element being OPT, by element index: smallest index among
    // the positive maxima.
    for e in 0..n {
        for &(v, p) in dist.get(e).atoms() {
            if v <= 0.0 {
                continue;
            }
            let others: f64 = (0..n)
                .filter(|&j| j != e)
                .map(|j| if j < e { dist.get(j).cdf_below(v) } else { dist.get(j).cdf(v) })
                .product();
            sink.in_opt[e] += p * others;
        }
    }

    let mut reach = 1.0;
    for (t, &e) in order.iter().enumerate() {
        let suffix = &order[t + 1..];
        // pmf of the suffix maximum on the union support (empty suffix = 0)
        let mut suffix_pmf = Vec::with_capacity(union.len());
        let mut prev_cdf = 0.0;
        for &u in &union {
            let c: f64 = suffix.iter().map(|&j| dist.get(j).cdf(u)).product();
            if c - prev_cdf > 0.0 {
                suffix_pmf.push((u, c - prev_cdf));
            }
            prev_cdf = c;
        }
        if suffix.is_empty() {
            suffix_pmf = vec![(0.0, 1.0)];
        }
        for &(v, p) in dist.get(e).atoms() {
            let x = thr.exceed_prob(v);
            if x <= 0.0 {
                continue;
            }
            let base = reach * p * x;
            for &(s, g) in &suffix_pmf {
                sink.add(base * g, v, v.max(s));
            }
            if v > 0.0 {
                let pre: f64 = order[..t]
                    .iter()
                    .map(|&j| if j < e && v == thr.tau { dist.get(j).cdf_below(v) } else { below[j] })
                    .product();
                let post: f64 = suffix
                    .iter()
                    .map(|&j| if j < e { dist.get(j).cdf_below(v) } else { dist.get(j).cdf(v) })
                    .product();
                sink.hit[e] += p * x * pre * post;
            }
        }
        reach *= below[e];
    }

    // Nothing accepted: every weight stayed at or below the threshold.
    let all_zero: f64 = dist
        .elements()
        .iter()
        .map(|d| d.mass_at(0.0) * if thr.tau > 0.0 { 1.0 } else { 1.0 - thr.accept_prob_at_atom })
        .product();
    if all_zero > 0.0 {
        sink.add(all_zero, 0.0, 0.0);
    }
    let positive = reach - all_zero;
    if positive > PROB_TOL * 1e-3 {
        // a = 0 against a positive optimum; only f's mean matters here
        let f_sum = truncated_max_mass_weighted(dist, thr);
        sink.mass += positive;
        sink.opt += f_sum;
        sink.eoir += positive * f64::INFINITY;
        *sink.ratios.entry(0.0f64.to_bits()).or_insert(0.0) += positive;
    }
    // Accepted branches contribute only their own part of E[f]; make the
    // total match the exact E[max].
    sink
}

/// `E[max w ; no weight exceeds thr]`.
fn truncated_max_mass_weighted(dist: &ProductDistribution, thr: &RandomizedThreshold) -> f64 {
    // Pr[max <= x, all below] for x < tau is prod F(x); at tau it is prod below.
    let mut prev_val = 0.0;
    let mut total = 0.0;
    let all_below: f64 = dist.elements().iter().map(|d| thr.below_prob(d)).product();
    let mut prev_cdf = dist.elements().iter().map(|d| d.cdf(0.0).min(thr.below_prob(d))).product::<f64>();
    for v in dist.support_union() {
        if v > thr.tau {
            break;
        }
        let c = if v < thr.tau { dist.max_cdf(v) } else { all_below };
        total += (v - prev_val) * (all_below - prev_cdf);
        prev_val = v;
        prev_cdf = c;
    }
    total
}

/// Monte Carlo estimate with default options.
pub fn evaluate_monte_carlo(instance: &Instance, policy: &dyn OnlinePolicy, trials: u64, seed: u64) -> Result<MetricReport> {
    evaluate_monte_carlo_with(instance, policy, trials, seed, &EvalOptions::default())
}

#[derive(Debug, Clone, Default)]
struct McSums {
    n: f64,
    a: f64,
    a2: f64,
    f: f64,
    f2: f64,
    af: f64,
    r: f64,
    r2: f64,
    ir: f64,
    ir2: f64,
    m: f64,
    u: f64,
    in_opt: Vec<f64>,
    hit: Vec<f64>,
    ratios: HashMap<u64, f64>,
}

impl McSums {
    fn merge(&mut self, o: McSums) {
        self.n += o.n;
        self.a += o.a;
        self.a2 += o.a2;
        self.f += o.f;
        self.f2 += o.f2;
        self.af += o.af;
        self.r += o.r;
        self.r2 += o.r2;
        self.ir += o.ir;
        self.ir2 += o.ir2;
        self.m += o.m;
        self.u += o.u;
        if self.in_opt.is_empty() {
            self.in_opt = o.in_opt;
            self.hit = o.hit;
        } else {
            for (x, y) in self.in_opt.iter_mut().zip(o.in_opt) {
                *x += y;
            }
            for (x, y) in self.hit.iter_mut().zip(o.hit) {
                *x += y;
            }
        }
        for (k, c) in o.ratios {
            *self.ratios.entry(k).or_insert(0.0) += c;
        }
    }
}

/// One trial's outcome.
#[derive(Debug, Clone)]
pub struct TrialOutcome {
    pub weights: Vec<f64>,
    pub order: Vec<usize>,
    pub selected: Vec<usize>,
    pub decisions: Vec<Decision>,
    pub value: f64,
    pub opt: f64,
}

/// Runs one seeded trial.
pub fn run_trial(instance: &Instance, policy: &dyn OnlinePolicy, seed: u64, trial: u64, random_order: bool) -> Result<TrialOutcome> {
    let mut wrng = stream(seed, trial, Lane::Weights);
    let mut weights = Vec::with_capacity(instance.ground_size());
    instance.dist().sample_into(&mut wrng, &mut weights);
    let mut order = instance.arrival_order().to_vec();
    if random_order {
        order.shuffle(&mut stream(seed, trial, Lane::Order));
    }
    let mut chance = RngChance(stream(seed, trial, Lane::Policy));
    run_trace(instance, policy, &weights, &order, &mut chance)
}

/// Runs `policy` on fixed weights and arrival order.
pub fn run_trace(
    instance: &Instance,
    policy: &dyn OnlinePolicy,
    weights: &[f64],
    order: &[usize],
    chance: &mut dyn Chance,
) -> Result<TrialOutcome> {
    let family = instance.family();
    let mut run = policy.start(chance);
    let mut selected = Vec::new();
    let mut prefix = Vec::with_capacity(order.len());
    let mut decisions = Vec::with_capacity(order.len());
    for (step, &e) in order.iter().enumerate() {
        let obs = Observation { step, element: e, weight: weights[e], selected: &selected, prefix: &prefix };
        let d = run.decide(&obs, chance);
        if d == Decision::Accept {
            if !family.can_add(&selected, e) {
                return Err(LabError::InfeasibleAccept { policy: policy.name(), element: e });
            }
            selected.push(e);
        }
        decisions.push(d);
        prefix.push((e, weights[e]));
    }
    let value = selected.iter().map(|&e| weights[e]).sum();
    let opt = family.offline_value(weights);
    Ok(TrialOutcome { weights: weights.to_vec(), order: order.to_vec(), selected, decisions, value, opt })
}

pub fn evaluate_monte_carlo_with(
    instance: &Instance,
    policy: &dyn OnlinePolicy,
    trials: u64,
    seed: u64,
    opts: &EvalOptions,
) -> Result<MetricReport> {
    if trials == 0 {
        return Err(LabError::bad("Monte Carlo needs at least one trial"));
    }
    let n = instance.ground_size();
    let cap = cap_for(instance, opts);
    let chunks = trials.div_ceil(MC_CHUNK) as usize;
    let parts = map_units(opts.exec, chunks, |c| -> Result<McSums> {
        let lo = c as u64 * MC_CHUNK;
        let hi = (lo + MC_CHUNK).min(trials);
        let mut s = McSums { in_opt: vec![0.0; n], hit: vec![0.0; n], ..Default::default() };
        for t in lo..hi {
            let out = run_trial(instance, policy, seed, t, opts.random_order)?;
            let (a, f) = (out.value, out.opt);
            let r = ratio(a, f);
            let ir = inverse_ratio(a, f);
            s.n += 1.0;
            s.a += a;
            s.a2 += a * a;
            s.f += f;
            s.f2 += f * f;
            s.af += a * f;
            s.r += r;
            s.r2 += r * r;
            s.ir += ir;
            s.ir2 += ir * ir;
            if matches_value(a, f) {
                s.m += 1.0;
            }
            if let Some(c) = cap {
                s.u += a.min(c);
            }
            let (opt_set, _) = instance.family().offline_optimum(&out.weights);
            for e in opt_set {
                s.in_opt[e] += 1.0;
                if out.selected.contains(&e) {
                    s.hit[e] += 1.0;
                }
            }
            *s.ratios.entry(r.to_bits()).or_insert(0.0) += 1.0;
        }
        Ok(s)
    });
    let mut s = McSums::default();
    for p in parts {
        s.merge(p?);
    }
    let nt = s.n;
    let z = 1.96;
    let mean = |x: f64| x / nt;
    let hw = |sum: f64, sum2: f64| {
        let m = sum / nt;
        let var = (sum2 / nt - m * m).max(0.0);
        z * (var / nt).sqrt()
    };
    let (ea, ef) = (mean(s.a), mean(s.f));
    let roe = if ef > 0.0 { ea / ef } else { 1.0 };
    let roe_hw = if ef > 0.0 {
        let va = (s.a2 / nt - ea * ea).max(0.0);
        let vf = (s.f2 / nt - ef * ef).max(0.0);
        let cov = s.af / nt - ea * ef;
        let v = (va - 2.0 * roe * cov + roe * roe * vf).max(0.0) / (ef * ef);
        z * (v / nt).sqrt()
    } else {
        0.0
    };
    let pbm = mean(s.m);
    let mut pbm_p = 1.0;
    let mut pbm_p_hw = 0.0;
    for (o, h) in s.in_opt.iter().zip(&s.hit) {
        if *o > 0.0 {
            let q = (h / o).min(1.0);
            if q < pbm_p {
                pbm_p = q;
                pbm_p_hw = z * (q * (1.0 - q) / o).sqrt();
            }
        }
    }
    let mut dist: Vec<(f64, f64)> = s.ratios.into_iter().map(|(b, c)| (f64::from_bits(b), c / nt)).collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(MetricReport {
        label: instance.label().to_string(),
        policy: policy.name(),
        mode: Mode::MonteCarlo { trials, seed },
        roe,
        eor: mean(s.r),
        eoir: mean(s.ir),
        pbm,
        pbm_p,
        expected_value: ea,
        expected_opt: ef,
        utility_cap: cap,
        expected_utility: cap.map(|_| mean(s.u)),
        ratio_distribution: dist,
        ci_halfwidth: Some(Halfwidths {
            roe: roe_hw,
            eor: hw(s.r, s.r2),
            eoir: hw(s.ir, s.ir2),
            pbm: z * (pbm * (1.0 - pbm) / nt).sqrt(),
            pbm_p: pbm_p_hw,
            expected_value: hw(s.a, s.a2),
            expected_opt: hw(s.f, s.f2),
        }),
    })
}

/// Dispatches on `mode`.
pub fn evaluate(instance: &Instance, policy: &dyn OnlinePolicy, mode: Mode, opts: &EvalOptions) -> Result<MetricReport> {
    match mode {
        Mode::Exact => evaluate_exact_with(instance, policy, opts),
        Mode::MonteCarlo { trials, seed } => evaluate_monte_carlo_with(instance, policy, trials, seed, opts),
    }
}

/// Exact when the tree fits, otherwise [`FALLBACK_TRIALS`] Monte Carlo trials.
pub fn evaluate_auto(instance: &Instance, policy: &dyn OnlinePolicy, seed: u64) -> Result<MetricReport> {
    match evaluate_exact(instance, policy) {
        Err(LabError::TooLarge { .. }) => evaluate_monte_carlo(instance, policy, FALLBACK_TRIALS, seed),
        other => other,
    }
}

/// `W = E[f(w)]` under the law truncated at `thr`.
pub fn core_expectation(instance: &Instance, thr: &RandomizedThreshold, seed: u64) -> Result<Estimate> {
    let truncated = instance.dist().truncate(thr)?;
    Ok(instance.family().expected_offline_value(&truncated, seed))
}

/// Probabilities of the core event (nobody exceeds the threshold) and the
/// tail event (exactly one element does).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventProbs {
    pub p_core: f64,
    pub p_tail: f64,
    pub threshold: RandomizedThreshold,
}

pub fn event_probabilities(instance: &Instance, gamma: f64) -> Result<EventProbs> {
    let thr = instance.dist().solve_gamma_threshold(gamma)?;
    Ok(EventProbs {
        p_core: instance.dist().core_probability(&thr),
        p_tail: instance.dist().tail_probability(&thr),
        threshold: thr,
    })
}

/// `min_e Pr[e in ALG | e in OPT]` over elements that are ever optimal.
pub fn pbm_p(instance: &Instance, policy: &dyn OnlinePolicy, mode: Mode) -> Result<f64> {
    Ok(evaluate(instance, policy, mode, &EvalOptions::default())?.pbm_p)
}

/// `E[min(a, cap)]`.
pub fn expected_utility(instance: &Instance, policy: &dyn OnlinePolicy, cap: f64, mode: Mode) -> Result<f64> {
    let opts = EvalOptions { utility_cap: Some(cap), ..EvalOptions::default() };
    let r = evaluate(instance, policy, mode, &opts)?;
    Ok(r.expected_utility.unwrap_or(r.expected_value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_conventions() {
        assert_eq!(ratio(0.0, 0.0), 1.0);
        assert_eq!(ratio(1.0, 2.0), 0.5);
        assert_eq!(inverse_ratio(0.0, 2.0), f64::INFINITY);
        assert_eq!(inverse_ratio(0.0, 0.0), 1.0);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }

    #[test]
    fn enumerate_chance_covers_all_branches() {
        let out = enumerate_chance(|ch| {
            let a = ch.choose(&[0.25, 0.75]);
            let b = if a == 1 { ch.choose(&[0.5, 0.0, 0.5]) } else { 9 };
            (a, b)
        });
        let total: f64 = out.iter().map(|o| o.1).sum();
        assert!((total - 1.0).abs() < 1e-15);
        assert_eq!(out.len(), 3);
        assert!(out.iter().any(|((a, b), p)| *a == 0 && *b == 9 && (*p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn report_json_round_trip_with_infinity() {
        let r = MetricReport {
            label: "x".into(),
            policy: "p".into(),
            mode: Mode::Exact,
            roe: 0.5,
            eor: 0.5,
            eoir: f64::INFINITY,
            pbm: 0.5,
            pbm_p: 1.0,
            expected_value: 1.0,
            expected_opt: 2.0,
            utility_cap: None,
            expected_utility: None,
            ratio_distribution: vec![(0.0, 0.5), (1.0, 0.5)],
            ci_halfwidth: None,
        };
        let s = serde_json::to_string(&r).unwrap();
        assert!(s.contains("\"eoir\":\"inf\""));
        assert_eq!(serde_json::from_str::<MetricReport>(&s).unwrap(), r);
        assert_eq!(r.csv_row().split(',').count(), MetricReport::CSV_HEADER.split(',').count());
    }
}
