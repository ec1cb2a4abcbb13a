//! Instances (family + product law + arrival order) and the generators for
//! the standard hard examples.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{DiscreteDistribution, ProductDistribution};
use crate::error::{LabError, Result};
use crate::feasibility::FeasibilityFamily;

/// File extension used for instance files.
pub const INSTANCE_EXT: &str = ".pli.json";

/// A feasibility family, a product weight law and an arrival order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawInstance", into = "RawInstance")]
pub struct Instance {
    label: String,
    family: FeasibilityFamily,
    arrival_order: Vec<usize>,
    dist: ProductDistribution,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    label: String,
    family: FeasibilityFamily,
    arrival_order: Vec<usize>,
    distributions: ProductDistribution,
}

impl TryFrom<RawInstance> for Instance {
    type Error = LabError;
    fn try_from(r: RawInstance) -> Result<Self> {
        Instance::with_order(r.label, r.family, r.distributions, r.arrival_order)
    }
}

impl From<Instance> for RawInstance {
    fn from(i: Instance) -> Self {
        RawInstance {
            label: i.label,
            family: i.family,
            arrival_order: i.arrival_order,
            distributions: i.dist,
        }
    }
}

impl Instance {
    /// Instance with arrival in index order.
    pub fn new(label: impl Into<String>, family: FeasibilityFamily, dist: ProductDistribution) -> Result<Self> {
        let order = (0..dist.len()).collect();
        Self::with_order(label, family, dist, order)
    }

    pub fn with_order(
        label: impl Into<String>,
        family: FeasibilityFamily,
        dist: ProductDistribution,
        arrival_order: Vec<usize>,
    ) -> Result<Self> {
        let n = family.ground_size();
        if dist.len() != n {
            return Err(LabError::InvalidInstance(format!(
                "{} distributions for a ground set of size {n}",
                dist.len()
            )));
        }
        let mut seen = vec![false; n];
        if arrival_order.len() != n
            || arrival_order.iter().any(|&e| e >= n || std::mem::replace(&mut seen[e], true))
        {
            return Err(LabError::InvalidInstance("arrival order is not a permutation of the ground set".into()));
        }
        Ok(Self { label: label.into(), family, arrival_order, dist })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn family(&self) -> &FeasibilityFamily {
        &self.family
    }

    pub fn dist(&self) -> &ProductDistribution {
        &self.dist
    }

    pub fn arrival_order(&self) -> &[usize] {
        &self.arrival_order
    }

    pub fn ground_size(&self) -> usize {
        self.dist.len()
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    /// Same instance with another arrival order.
    pub fn reordered(&self, order: Vec<usize>) -> Result<Self> {
        Self::with_order(self.label.clone(), self.family.clone(), self.dist.clone(), order)
    }

    /// Same family and order over another product law.
    pub fn with_dist(&self, dist: ProductDistribution) -> Result<Self> {
        Self::with_order(self.label.clone(), self.family.clone(), dist, self.arrival_order.clone())
    }

    /// Utility cap carried in the label as `cap=<value>`, if any.
    pub fn utility_cap(&self) -> Option<f64> {
        let start = self.label.find("cap=")? + 4;
        let rest = &self.label[start..];
        let end = rest.find([',', ')', ' ']).unwrap_or(rest.len());
        rest[..end].parse().ok()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(LabError::bad(format!("eps must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn point(v: f64) -> DiscreteDistribution {
    DiscreteDistribution::point(v).expect("finite non-negative point")
}

fn single_choice(label: String, dists: Vec<DiscreteDistribution>) -> Result<Instance> {
    let n = dists.len();
    Instance::new(label, FeasibilityFamily::single(n)?, ProductDistribution::new(dists)?)
}

/// `w1 = 1`, `w2 = (1+2eps)/eps` with probability `eps`, else 0.
pub fn gen_example1(eps: f64) -> Result<Instance> {
    check_eps(eps)?;
    let high = (1.0 + 2.0 * eps) / eps;
    single_choice(
        format!("example1(eps={eps})"),
        vec![point(1.0), DiscreteDistribution::two_point(0.0, high, eps)?],
    )
}

/// `n` pairs; in each, box A is 1 and box B is 0 or 2 with equal odds. At
/// most one box per pair may be chosen. Pair `i` holds elements `2i` (A) and
/// `2i + 1` (B).
pub fn gen_example2(n: usize) -> Result<Instance> {
    if n == 0 {
        return Err(LabError::bad("example2 needs n >= 1"));
    }
    let mut dists = Vec::with_capacity(2 * n);
    for _ in 0..n {
        dists.push(point(1.0));
        dists.push(DiscreteDistribution::two_point(0.0, 2.0, 0.5)?);
    }
    let blocks = (0..n).map(|i| vec![2 * i, 2 * i + 1]).collect();
    Instance::new(
        format!("example2(n={n})"),
        FeasibilityFamily::partition(blocks)?,
        ProductDistribution::new(dists)?,
    )
}

/// `w1 = 1`, `w2 = 1/eps^2` with probability `eps`, else `eps^2`.
pub fn gen_example3(eps: f64) -> Result<Instance> {
    check_eps(eps)?;
    let second = DiscreteDistribution::from_masses([(eps * eps, 1.0 - eps), (1.0 / (eps * eps), eps)])?;
    single_choice(format!("example3(eps={eps})"), vec![point(1.0), second])
}

/// Element 1 is 1; element `i > 1` is `M^(i-1)` with probability `1/n`, else 0.
pub fn gen_mpower(n: usize, m: f64) -> Result<Instance> {
    if n < 2 || !(m > 1.0) || !m.is_finite() {
        return Err(LabError::bad(format!("mpower needs n >= 2 and M > 1, got n={n}, M={m}")));
    }
    if (n - 1) as f64 * m.log10() > 300.0 {
        return Err(LabError::Overflow(format!("M^(n-1) = {m}^{} exceeds 1e300", n - 1)));
    }
    let p = 1.0 / n as f64;
    let mut dists = vec![point(1.0)];
    for i in 1..n {
        dists.push(DiscreteDistribution::two_point(0.0, m.powi(i as i32), p)?);
    }
    single_choice(format!("mpower(n={n},M={m})"), dists)
}

/// `X1 = 1`, `X2 = 1/eps` with probability `eps`, else 0.
pub fn gen_roe_ub(eps: f64) -> Result<Instance> {
    check_eps(eps)?;
    single_choice(
        format!("roe_ub(eps={eps})"),
        vec![point(1.0), DiscreteDistribution::two_point(0.0, 1.0 / eps, eps)?],
    )
}

/// Three boxes: 1; `1/eps` w.p. `sqrt(eps)`; `2/eps^2` w.p. `eps`. The
/// utility cap `2/eps` is recorded in the label.
pub fn gen_risk(eps: f64) -> Result<Instance> {
    check_eps(eps)?;
    let cap = 2.0 / eps;
    single_choice(
        format!("risk(eps={eps},cap={cap})"),
        vec![
            point(1.0),
            DiscreteDistribution::two_point(0.0, 1.0 / eps, eps.sqrt())?,
            DiscreteDistribution::two_point(0.0, 2.0 / (eps * eps), eps)?,
        ],
    )
}

/// Equiprobable midpoint discretization of `U[1, 2]`.
pub fn uniform_1_2_grid(grid: usize) -> Result<DiscreteDistribution> {
    if grid < 2 {
        return Err(LabError::bad("grid needs at least 2 atoms"));
    }
    let p = 1.0 / grid as f64;
    DiscreteDistribution::from_masses((0..grid).map(|j| (1.0 + (j as f64 + 0.5) / grid as f64, p)))
}

/// `n` pairs, each a deterministic 1 and a discretized `U[1, 2]` box; only
/// elements from one pair may be chosen. Deterministic boxes are elements
/// `0..n` and arrive first; the random box of pair `i` is element `n + i`.
pub fn gen_pbmp_pairs(n: usize, grid: usize) -> Result<Instance> {
    if n == 0 {
        return Err(LabError::bad("pbmp_pairs needs n >= 1"));
    }
    let u = uniform_1_2_grid(grid)?;
    let mut dists = vec![point(1.0); n];
    dists.extend(std::iter::repeat(u).take(n));
    let pairs = (0..n).map(|i| vec![i, n + i]).collect();
    Instance::new(
        format!("pbmp_pairs(n={n},grid={grid})"),
        FeasibilityFamily::explicit(2 * n, pairs)?,
        ProductDistribution::new(dists)?,
    )
}

/// `n` i.i.d. elements with law `{0: 0.5, 1: 0.3, 2: 0.2}` under a
/// k-uniform constraint.
pub fn gen_iid_k_uniform(n: usize, k: usize) -> Result<Instance> {
    let d = DiscreteDistribution::new(vec![(0.0, 0.5), (1.0, 0.3), (2.0, 0.2)])?;
    Instance::new(
        format!("iid_k_uniform(n={n},k={k})"),
        FeasibilityFamily::k_uniform(n, k)?,
        ProductDistribution::new(vec![d; n])?,
    )
}

/// Replaces the target's law by `w + (E[sum w]/x) * Bernoulli(x)`.
pub fn bernoulli_boost(instance: &Instance, x: f64, target: usize) -> Result<Instance> {
    if !(x > 0.0 && x <= 1.0) {
        return Err(LabError::bad(format!("x must lie in (0, 1], got {x}")));
    }
    if target >= instance.ground_size() {
        return Err(LabError::IndexOutOfRange { index: target, ground_size: instance.ground_size() });
    }
    let shift = instance.dist().expected_sum() / x;
    let boosted = instance.dist().get(target).boosted(shift, x)?;
    let dist = instance.dist().replace(target, boosted);
    Ok(instance
        .with_dist(dist)?
        .with_label(format!("boost({},x={x},target={target})", instance.label())))
}

/// Parsed generator call, e.g. `example2(n=3)`.
pub fn generate(spec: &str) -> Result<Instance> {
    let call = crate::policies::spec::parse_call(spec)?;
    call.only(&["eps", "n", "M", "grid", "k"])?;
    let eps = || call.f64_or("eps", 0.5);
    match call.name.as_str() {
        "example1" => gen_example1(eps()?),
        "example2" => gen_example2(call.usize_or("n", 1)?),
        "example3" => gen_example3(eps()?),
        "mpower" => gen_mpower(call.usize_or("n", 5)?, call.f64_or("M", 10.0)?),
        "roe_ub" => gen_roe_ub(eps()?),
        "risk" => gen_risk(eps()?),
        "iid_k_uniform" => gen_iid_k_uniform(call.usize_or("n", 20)?, call.usize_or("k", 5)?),
        "pbmp_pairs" => gen_pbmp_pairs(call.usize_or("n", 2)?, call.usize_or("grid", 64)?),
        other => Err(LabError::UnknownGenerator(other.to_string())),
    }
}

/// Family shapes drawn by [`random_instance`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RandomFamily {
    Single,
    KUniform,
    Partition,
    Explicit,
    /// One of single, k-uniform and partition, chosen per instance.
    Structured,
}

/// Size limits for [`random_instance`].
#[derive(Debug, Clone, Copy)]
pub struct RandomSpec {
    pub family: RandomFamily,
    pub n_min: usize,
    pub n_max: usize,
    pub atoms_max: usize,
    /// Upper bound on the joint support size.
    pub max_support: u64,
}

impl RandomSpec {
    pub fn new(family: RandomFamily, n_min: usize, n_max: usize, atoms_max: usize) -> Self {
        Self { family, n_min, n_max, atoms_max, max_support: u64::MAX }
    }

    pub fn max_support(mut self, cap: u64) -> Self {
        self.max_support = cap;
        self
    }
}

fn random_dist(rng: &mut impl Rng, atoms: usize) -> DiscreteDistribution {
    let mut values: Vec<f64> = Vec::with_capacity(atoms);
    while values.len() < atoms {
        // quarter steps on [0, 10] so that ties across elements happen
        let v = rng.gen_range(0..=40) as f64 / 4.0;
        if !values.contains(&v) {
            values.push(v);
        }
    }
    let masses: Vec<(f64, f64)> = values.into_iter().map(|v| (v, rng.gen_range(0.05..1.0))).collect();
    DiscreteDistribution::from_masses(masses).expect("positive masses")
}

fn random_family(rng: &mut impl Rng, kind: RandomFamily, n: usize) -> FeasibilityFamily {
    use rand::seq::SliceRandom;
    let kind = match kind {
        RandomFamily::Structured => {
            *[RandomFamily::Single, RandomFamily::KUniform, RandomFamily::Partition].choose(rng).expect("nonempty")
        }
        k => k,
    };
    match kind {
        RandomFamily::Single | RandomFamily::Structured => FeasibilityFamily::single(n).expect("n >= 1"),
        RandomFamily::KUniform => FeasibilityFamily::k_uniform(n, rng.gen_range(1..=n)).expect("1 <= k <= n"),
        RandomFamily::Partition => {
            let mut elems: Vec<usize> = (0..n).collect();
            elems.shuffle(rng);
            let blocks_n = rng.gen_range(1..=n);
            let mut blocks = vec![Vec::new(); blocks_n];
            for (i, e) in elems.into_iter().enumerate() {
                let b = if i < blocks_n { i } else { rng.gen_range(0..blocks_n) };
                blocks[b].push(e);
            }
            FeasibilityFamily::partition(blocks).expect("blocks partition the ground set")
        }
        RandomFamily::Explicit => {
            let m = rng.gen_range(1..=n.max(2));
            let mut sets: Vec<Vec<usize>> = (0..m)
                .map(|_| {
                    let mut s: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.4)).collect();
                    if s.is_empty() {
                        s.push(rng.gen_range(0..n));
                    }
                    s
                })
                .collect();
            sets.sort();
            sets.dedup();
            let maximal: Vec<Vec<usize>> = sets
                .iter()
                .filter(|a| !sets.iter().any(|b| b != *a && a.iter().all(|x| b.contains(x))))
                .cloned()
                .collect();
            FeasibilityFamily::explicit(n, maximal).expect("maximal sets are an antichain")
        }
    }
}

/// A seeded random instance within `spec`.
pub fn random_instance(seed: u64, spec: &RandomSpec) -> Instance {
    let mut rng = crate::rng::stream(seed, 0, crate::rng::Lane::Aux(3));
    loop {
        let n = rng.gen_range(spec.n_min..=spec.n_max);
        let mut dists = Vec::with_capacity(n);
        let mut support = 1u64;
        for _ in 0..n {
            let remaining = (spec.max_support / support).max(1);
            let cap = spec.atoms_max.min(remaining as usize).max(1);
            let atoms = rng.gen_range(1..=cap);
            let d = random_dist(&mut rng, atoms);
            support = support.saturating_mul(d.len() as u64);
            dists.push(d);
        }
        if support > spec.max_support {
            continue;
        }
        let family = random_family(&mut rng, spec.family, n);
        let label = format!("random(seed={seed},{})", family.kind());
        return Instance::new(label, family, ProductDistribution::new(dists).expect("n >= 1"))
            .expect("consistent sizes");
    }
}

/// `count` instances with seeds `base_seed..base_seed + count`.
pub fn random_suite(base_seed: u64, count: usize, spec: &RandomSpec) -> Vec<Instance> {
    (0..count as u64).map(|i| random_instance(base_seed + i, spec)).collect()
}
