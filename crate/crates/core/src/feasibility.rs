//! Downward-closed feasibility families and the offline optimum
//! `f(w) = w(OPT(w))`.

use serde::{Deserialize, Serialize};

use crate::distributions::ProductDistribution;
use crate::error::{LabError, Result};
use crate::rng::{stream, Lane};

/// Largest ground set accepted by the explicit representation.
pub const EXPLICIT_MAX_GROUND: usize = 30;

/// Joint support size up to which expectations are enumerated exactly.
pub const EXACT_EXPECTATION_CAP: u64 = 1_000_000;

/// Draws used when an expectation falls back to Monte Carlo.
pub const FALLBACK_DRAWS: u64 = 100_000;

/// A downward-closed set system over `0..ground_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawFamily", into = "RawFamily")]
pub enum FeasibilityFamily {
    SingleChoice { ground_size: usize },
    KUniform { ground_size: usize, k: usize },
    /// Capacity one per block.
    Partition { blocks: Vec<Vec<usize>>, block_of: Vec<usize> },
    /// Feasible sets are the subsets of the listed maximal sets.
    Explicit { ground_size: usize, maximal_sets: Vec<Vec<usize>>, masks: Vec<u64> },
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
enum RawFamily {
    Single { ground_size: usize },
    KUniform { ground_size: usize, k: usize },
    Partition { blocks: Vec<Vec<usize>> },
    Explicit { ground_size: usize, maximal_sets: Vec<Vec<usize>> },
}

impl TryFrom<RawFamily> for FeasibilityFamily {
    type Error = LabError;
    fn try_from(raw: RawFamily) -> Result<Self> {
        match raw {
            RawFamily::Single { ground_size } => FeasibilityFamily::single(ground_size),
            RawFamily::KUniform { ground_size, k } => FeasibilityFamily::k_uniform(ground_size, k),
            RawFamily::Partition { blocks } => FeasibilityFamily::partition(blocks),
            RawFamily::Explicit { ground_size, maximal_sets } => {
                FeasibilityFamily::explicit(ground_size, maximal_sets)
            }
        }
    }
}

impl From<FeasibilityFamily> for RawFamily {
    fn from(f: FeasibilityFamily) -> Self {
        match f {
            FeasibilityFamily::SingleChoice { ground_size } => RawFamily::Single { ground_size },
            FeasibilityFamily::KUniform { ground_size, k } => RawFamily::KUniform { ground_size, k },
            FeasibilityFamily::Partition { blocks, .. } => RawFamily::Partition { blocks },
            FeasibilityFamily::Explicit { ground_size, maximal_sets, .. } => {
                RawFamily::Explicit { ground_size, maximal_sets }
            }
        }
    }
}

fn mask_of(set: &[usize]) -> u64 {
    set.iter().fold(0u64, |m, &e| m | (1u64 << e))
}

impl FeasibilityFamily {
    pub fn single(ground_size: usize) -> Result<Self> {
        if ground_size == 0 {
            return Err(LabError::MalformedFamily("empty ground set".into()));
        }
        Ok(Self::SingleChoice { ground_size })
    }

    pub fn k_uniform(ground_size: usize, k: usize) -> Result<Self> {
        if ground_size == 0 || k == 0 || k > ground_size {
            return Err(LabError::MalformedFamily(format!(
                "k-uniform needs 1 <= k <= ground size, got k={k}, n={ground_size}"
            )));
        }
        Ok(Self::KUniform { ground_size, k })
    }

    pub fn partition(blocks: Vec<Vec<usize>>) -> Result<Self> {
        let n: usize = blocks.iter().map(Vec::len).sum();
        if n == 0 {
            return Err(LabError::MalformedFamily("empty ground set".into()));
        }
        let mut block_of = vec![usize::MAX; n];
        for (b, block) in blocks.iter().enumerate() {
            if block.is_empty() {
                return Err(LabError::MalformedFamily(format!("block {b} is empty")));
            }
            for &e in block {
                if e >= n || block_of[e] != usize::MAX {
                    return Err(LabError::MalformedFamily(format!(
                        "blocks do not partition 0..{n} (element {e})"
                    )));
                }
                block_of[e] = b;
            }
        }
        Ok(Self::Partition { blocks, block_of })
    }

    pub fn explicit(ground_size: usize, maximal_sets: Vec<Vec<usize>>) -> Result<Self> {
        if ground_size == 0 || ground_size > EXPLICIT_MAX_GROUND {
            return Err(LabError::MalformedFamily(format!(
                "explicit families need 1..={EXPLICIT_MAX_GROUND} elements, got {ground_size}"
            )));
        }
        let mut sets = Vec::with_capacity(maximal_sets.len());
        for set in maximal_sets {
            let mut set = set;
            set.sort_unstable();
            set.dedup();
            if let Some(&e) = set.iter().find(|&&e| e >= ground_size) {
                return Err(LabError::IndexOutOfRange { index: e, ground_size });
            }
            sets.push(set);
        }
        let masks = sets.iter().map(|s| mask_of(s)).collect();
        let family = Self::Explicit { ground_size, maximal_sets: sets, masks };
        family.check_downward_closed()?;
        Ok(family)
    }

    pub fn ground_size(&self) -> usize {
        match self {
            Self::SingleChoice { ground_size }
            | Self::KUniform { ground_size, .. }
            | Self::Explicit { ground_size, .. } => *ground_size,
            Self::Partition { block_of, .. } => block_of.len(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Self::SingleChoice { .. } => "single",
            Self::KUniform { .. } => "k_uniform",
            Self::Partition { .. } => "partition",
            Self::Explicit { .. } => "explicit",
        }
    }

    /// Verifies that no listed maximal set contains another.
    pub fn check_downward_closed(&self) -> Result<bool> {
        if let Self::Explicit { masks, .. } = self {
            for (i, &a) in masks.iter().enumerate() {
                for (j, &b) in masks.iter().enumerate() {
                    if i != j && a & b == a {
                        return Err(LabError::MalformedFamily(format!(
                            "maximal set {i} is contained in maximal set {j}"
                        )));
                    }
                }
            }
        }
        Ok(true)
    }

    fn check_index(&self, e: usize) -> Result<()> {
        let n = self.ground_size();
        if e >= n {
            return Err(LabError::IndexOutOfRange { index: e, ground_size: n });
        }
        Ok(())
    }

    /// Membership test for a set given as element indices.
    pub fn is_feasible(&self, set: &[usize]) -> Result<bool> {
        let mut set = set.to_vec();
        set.sort_unstable();
        set.dedup();
        for &e in &set {
            self.check_index(e)?;
        }
        Ok(match self {
            Self::SingleChoice { .. } => set.len() <= 1,
            Self::KUniform { k, .. } => set.len() <= *k,
            Self::Partition { block_of, blocks } => {
                let mut used = vec![false; blocks.len()];
                set.iter().all(|&e| !std::mem::replace(&mut used[block_of[e]], true))
            }
            Self::Explicit { masks, .. } => {
                let m = mask_of(&set);
                m == 0 || masks.iter().any(|&mx| m & mx == m)
            }
        })
    }

    /// Whether `selected + {e}` is feasible, given that `selected` is.
    pub fn can_add(&self, selected: &[usize], e: usize) -> bool {
        if selected.contains(&e) {
            return false;
        }
        match self {
            Self::SingleChoice { .. } => selected.is_empty(),
            Self::KUniform { k, .. } => selected.len() < *k,
            Self::Partition { block_of, .. } => {
                let b = block_of[e];
                selected.iter().all(|&s| block_of[s] != b)
            }
            Self::Explicit { masks, .. } => {
                let m = mask_of(selected) | (1u64 << e);
                masks.iter().any(|&mx| m & mx == m)
            }
        }
    }

    /// `f(w)`: the largest total weight of a feasible set.
    pub fn offline_value(&self, w: &[f64]) -> f64 {
        match self {
            Self::SingleChoice { .. } => w.iter().copied().fold(0.0, f64::max),
            Self::KUniform { k, .. } => {
                if *k >= w.len() {
                    return w.iter().sum();
                }
                let mut v = w.to_vec();
                v.select_nth_unstable_by(*k - 1, |a, b| b.total_cmp(a));
                v[..*k].iter().sum()
            }
            Self::Partition { blocks, .. } => blocks
                .iter()
                .map(|b| b.iter().map(|&e| w[e]).fold(0.0, f64::max))
                .sum(),
            Self::Explicit { maximal_sets, .. } => maximal_sets
                .iter()
                .map(|s| s.iter().map(|&e| w[e]).sum::<f64>())
                .fold(0.0, f64::max),
        }
    }

    /// `(OPT(w), f(w))`. Ties resolve to the lexicographically smallest
    /// optimal set among those without zero-weight elements.
    pub fn offline_optimum(&self, w: &[f64]) -> (Vec<usize>, f64) {
        let mut set = match self {
            Self::SingleChoice { .. } => {
                let mut best: Option<usize> = None;
                for (e, &x) in w.iter().enumerate() {
                    if x > 0.0 && best.map_or(true, |b| x > w[b]) {
                        best = Some(e);
                    }
                }
                best.into_iter().collect()
            }
            Self::KUniform { k, .. } => {
                let mut idx: Vec<usize> = (0..w.len()).filter(|&e| w[e] > 0.0).collect();
                idx.sort_by(|&a, &b| w[b].total_cmp(&w[a]).then(a.cmp(&b)));
                idx.truncate(*k);
                idx
            }
            Self::Partition { blocks, .. } => blocks
                .iter()
                .filter_map(|b| {
                    let mut best: Option<usize> = None;
                    for &e in b {
                        if w[e] > 0.0 && best.map_or(true, |x| w[e] > w[x] || (w[e] == w[x] && e < x)) {
                            best = Some(e);
                        }
                    }
                    best
                })
                .collect(),
            Self::Explicit { maximal_sets, .. } => {
                let mut best: (Vec<usize>, f64) = (Vec::new(), 0.0);
                for s in maximal_sets {
                    let pos: Vec<usize> = s.iter().copied().filter(|&e| w[e] > 0.0).collect();
                    let v: f64 = pos.iter().map(|&e| w[e]).sum();
                    if v > best.1 || (v == best.1 && v > 0.0 && pos < best.0) {
                        best = (pos, v);
                    }
                }
                best.0
            }
        };
        set.sort_unstable();
        let value = set.iter().map(|&e| w[e]).sum();
        (set, value)
    }

    /// `E[f(w)]` under `product`: closed forms for structured families,
    /// enumeration when the joint support is small, Monte Carlo otherwise.
    pub fn expected_offline_value(&self, product: &ProductDistribution, mc_seed: u64) -> Estimate {
        match self {
            Self::SingleChoice { .. } => Estimate::exact(product.expected_max()),
            Self::Partition { blocks, .. } => {
                let v = blocks
                    .iter()
                    .map(|b| {
                        let sub = ProductDistribution::new(b.iter().map(|&e| product.get(e).clone()).collect())
                            .expect("blocks are non-empty");
                        sub.expected_max()
                    })
                    .sum();
                Estimate::exact(v)
            }
            Self::KUniform { k, .. } => Estimate::exact(expected_top_k_sum(product, *k)),
            Self::Explicit { .. } => self.expected_by_enumeration_or_mc(product, mc_seed),
        }
    }

    /// Same expectation by enumeration (or Monte Carlo past the cap),
    /// ignoring closed forms.
    pub fn expected_by_enumeration_or_mc(&self, product: &ProductDistribution, mc_seed: u64) -> Estimate {
        if product.joint_support() <= EXACT_EXPECTATION_CAP {
            let mut total = 0.0;
            product.for_each_outcome(|w, p| total += p * self.offline_value(w));
            Estimate::exact(total)
        } else {
            let mut rng = stream(mc_seed, 0, Lane::Aux(7));
            let mut w = Vec::with_capacity(product.len());
            let mut total = 0.0;
            for _ in 0..FALLBACK_DRAWS {
                product.sample_into(&mut rng, &mut w);
                total += self.offline_value(&w);
            }
            Estimate { value: total / FALLBACK_DRAWS as f64, exact: false, draws: FALLBACK_DRAWS }
        }
    }
}

/// An expectation together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub exact: bool,
    /// Monte Carlo draws used; zero when exact.
    pub draws: u64,
}

impl Estimate {
    pub fn exact(value: f64) -> Self {
        Self { value, exact: true, draws: 0 }
    }
}

/// `E[sum of the k largest weights] = sum_j (v_j - v_{j-1}) E[min(k, N(v_{j-1}))]`
/// with `N(x)` the number of weights above `x` (Poisson-binomial).
fn expected_top_k_sum(product: &ProductDistribution, k: usize) -> f64 {
    let mut prev = 0.0;
    let mut total = 0.0;
    for v in product.support_union() {
        let mut pmf = vec![0.0; k + 1];
        pmf[0] = 1.0;
        for d in product.elements() {
            let p = 1.0 - d.cdf(prev);
            // the top bucket absorbs counts >= k
            for j in (0..=k).rev() {
                let stay = if j == k { pmf[j] } else { pmf[j] * (1.0 - p) };
                let from_below = if j > 0 { pmf[j - 1] * p } else { 0.0 };
                pmf[j] = stay + from_below;
            }
        }
        let e_min: f64 = pmf.iter().enumerate().map(|(j, &q)| j as f64 * q).sum();
        total += (v - prev) * e_min;
        prev = v;
    }
    total
}

/// A validated non-negative weight vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector(Vec<f64>);

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if let Some(w) = weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(LabError::bad(format!("weight {w} is not a finite non-negative number")));
        }
        Ok(Self(weights))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `w(S)`.
    pub fn restricted_sum(&self, set: &[usize]) -> f64 {
        set.iter().map(|&e| self.0[e]).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::DiscreteDistribution;

    #[test]
    fn membership_examples() {
        let single = FeasibilityFamily::single(3).unwrap();
        assert!(single.is_feasible(&[]).unwrap());
        assert!(!single.is_feasible(&[0, 1]).unwrap());
        assert!(matches!(single.is_feasible(&[3]), Err(LabError::IndexOutOfRange { .. })));

        let part = FeasibilityFamily::partition(vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert!(part.is_feasible(&[0, 2]).unwrap());
        assert!(!part.is_feasible(&[0, 1]).unwrap());
    }

    #[test]
    fn optimum_examples() {
        let single = FeasibilityFamily::single(3).unwrap();
        assert_eq!(single.offline_optimum(&[3.0, 5.0, 2.0]), (vec![1], 5.0));

        let pairs = FeasibilityFamily::partition(vec![vec![0, 1], vec![2, 3]]).unwrap();
        assert_eq!(pairs.offline_optimum(&[1.0, 2.0, 1.0, 2.0]), (vec![1, 3], 4.0));

        let dc = FeasibilityFamily::explicit(3, vec![vec![0, 1], vec![2]]).unwrap();
        assert_eq!(dc.offline_optimum(&[1.0, 1.0, 3.0]), (vec![2], 3.0));
        assert_eq!(dc.offline_value(&[1.0, 1.0, 3.0]), 3.0);
    }

    #[test]
    fn ties_pick_smallest_set() {
        let single = FeasibilityFamily::single(3).unwrap();
        assert_eq!(single.offline_optimum(&[2.0, 2.0, 1.0]).0, vec![0]);
        assert_eq!(single.offline_optimum(&[0.0, 0.0, 0.0]), (vec![], 0.0));
        let k2 = FeasibilityFamily::k_uniform(4, 2).unwrap();
        assert_eq!(k2.offline_optimum(&[1.0, 3.0, 1.0, 1.0]), (vec![0, 1], 4.0));
    }

    #[test]
    fn downward_closed_checks() {
        assert!(matches!(
            FeasibilityFamily::explicit(2, vec![vec![0], vec![0, 1]]),
            Err(LabError::MalformedFamily(_))
        ));
        assert!(FeasibilityFamily::explicit(3, vec![vec![0, 1], vec![1, 2]]).unwrap().check_downward_closed().unwrap());
        let only_empty = FeasibilityFamily::explicit(2, vec![]).unwrap();
        assert!(only_empty.check_downward_closed().unwrap());
        assert!(only_empty.is_feasible(&[]).unwrap());
        assert!(!only_empty.is_feasible(&[0]).unwrap());
    }

    #[test]
    fn json_round_trip() {
        let part = FeasibilityFamily::partition(vec![vec![0, 1], vec![2, 3]]).unwrap();
        let s = serde_json::to_string(&part).unwrap();
        assert_eq!(s, r#"{"variant":"partition","blocks":[[0,1],[2,3]]}"#);
        assert_eq!(serde_json::from_str::<FeasibilityFamily>(&s).unwrap(), part);
        assert!(serde_json::from_str::<FeasibilityFamily>(r#"{"variant":"partition","blocks":[[0,1],[1]]}"#).is_err());
    }

    #[test]
    fn top_k_expectation_matches_enumeration() {
        let d = |a: &[(f64, f64)]| DiscreteDistribution::new(a.to_vec()).unwrap();
        let product = ProductDistribution::new(vec![
            d(&[(0.0, 0.5), (2.0, 0.5)]),
            d(&[(1.0, 1.0)]),
            d(&[(0.5, 0.25), (1.0, 0.25), (3.0, 0.5)]),
            d(&[(0.0, 0.9), (10.0, 0.1)]),
        ])
        .unwrap();
        for k in 1..=4 {
            let fam = FeasibilityFamily::k_uniform(4, k).unwrap();
            let closed = fam.expected_offline_value(&product, 0).value;
            let brute = fam.expected_by_enumeration_or_mc(&product, 0).value;
            assert!((closed - brute).abs() < 1e-12, "k={k}: {closed} vs {brute}");
        }
    }
}
