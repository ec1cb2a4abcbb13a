//! Finite-support weight laws, their products, truncation at a randomized
//! threshold, and the quantile threshold `Pr[no weight exceeds tau] = gamma`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::PROB_TOL;

/// Law of one non-negative weight with finitely many atoms.
///
/// Atoms are `(value, prob)` pairs with strictly increasing values and
/// probabilities in `(0, 1]` summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDistribution", into = "RawDistribution")]
pub struct DiscreteDistribution {
    atoms: Vec<(f64, f64)>,
}

#[derive(Serialize, Deserialize)]
struct RawDistribution {
    atoms: Vec<(f64, f64)>,
}

impl TryFrom<RawDistribution> for DiscreteDistribution {
    type Error = LabError;
    fn try_from(raw: RawDistribution) -> Result<Self> {
        DiscreteDistribution::new(raw.atoms)
    }
}

impl From<DiscreteDistribution> for RawDistribution {
    fn from(d: DiscreteDistribution) -> Self {
        RawDistribution { atoms: d.atoms }
    }
}

impl DiscreteDistribution {
    /// Validates and wraps a sorted atom list.
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(LabError::InvalidDistribution("no atoms".into()));
        }
        let mut total = 0.0;
        for (i, &(v, p)) in atoms.iter().enumerate() {
            if !v.is_finite() || v < 0.0 {
                return Err(LabError::InvalidDistribution(format!("value {v} is not a finite non-negative weight")));
            }
            if !(p > 0.0 && p <= 1.0) {
                return Err(LabError::InvalidDistribution(format!("probability {p} outside (0, 1]")));
            }
            if i > 0 && atoms[i - 1].0 >= v {
                return Err(LabError::InvalidDistribution("values must be strictly increasing".into()));
            }
            total += p;
        }
        if (total - 1.0).abs() > PROB_TOL {
            return Err(LabError::InvalidDistribution(format!("probabilities sum to {total}")));
        }
        Ok(Self { atoms })
    }

    /// Builds a distribution from unsorted, possibly repeated `(value, mass)`
    /// pairs. Masses are merged per value, zero masses dropped, and the
    /// result renormalized.
    pub fn from_masses(pairs: impl IntoIterator<Item = (f64, f64)>) -> Result<Self> {
        let mut pairs: Vec<(f64, f64)> = pairs.into_iter().filter(|&(_, m)| m > 0.0).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut merged: Vec<(f64, f64)> = Vec::with_capacity(pairs.len());
        for (v, m) in pairs {
            match merged.last_mut() {
                Some(last) if last.0 == v => last.1 += m,
                _ => merged.push((v, m)),
            }
        }
        let total: f64 = merged.iter().map(|a| a.1).sum();
        if total <= 0.0 {
            return Err(LabError::ZeroMass);
        }
        for a in &mut merged {
            a.1 /= total;
        }
        // Renormalization can push a lone atom a hair over 1.
        for a in &mut merged {
            a.1 = a.1.min(1.0);
        }
        Self::new(merged)
    }

    pub fn point(value: f64) -> Result<Self> {
        Self::new(vec![(value, 1.0)])
    }

    /// `0` with probability `1 - p`, `value` with probability `p`.
    pub fn two_point(low: f64, high: f64, p_high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&p_high) {
            return Err(LabError::InvalidDistribution(format!("probability {p_high} outside [0, 1]")));
        }
        Self::from_masses([(low, 1.0 - p_high), (high, p_high)])
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.atoms.iter().map(|a| a.0)
    }

    pub fn probs(&self) -> Vec<f64> {
        self.atoms.iter().map(|a| a.1).collect()
    }

    pub fn max_value(&self) -> f64 {
        self.atoms[self.atoms.len() - 1].0
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|&(v, p)| v * p).sum()
    }

    /// Index of the atom at exactly `value`.
    pub fn atom_index(&self, value: f64) -> Option<usize> {
        self.atoms.binary_search_by(|a| a.0.total_cmp(&value)).ok()
    }

    /// `Pr[w <= x]`.
    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            if v > x {
                break;
            }
            acc += p;
        }
        acc.min(1.0)
    }

    /// `Pr[w < x]`.
    pub fn cdf_below(&self, x: f64) -> f64 {
        self.atoms.iter().take_while(|a| a.0 < x).map(|a| a.1).sum::<f64>().min(1.0)
    }

    /// `Pr[w = x]`.
    pub fn mass_at(&self, x: f64) -> f64 {
        self.atom_index(x).map_or(0.0, |i| self.atoms[i].1)
    }

    /// Draws an atom by inverse CDF from one uniform.
    pub fn sample(&self, rng: &mut impl Rng) -> f64 {
        self.quantile(rng.gen::<f64>())
    }

    /// Value at uniform level `u in [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for &(v, p) in &self.atoms {
            acc += p;
            if u < acc {
                return v;
            }
        }
        self.max_value()
    }

    /// Conditional law given that the weight does not exceed `thr`.
    ///
    /// Atoms strictly below `tau` keep their mass; an atom at `tau` keeps
    /// `(1 - accept_prob_at_atom)` of it.
    pub fn truncate(&self, thr: &RandomizedThreshold) -> Result<Self> {
        let kept = self.atoms.iter().filter_map(|&(v, p)| {
            if v < thr.tau {
                Some((v, p))
            } else if v == thr.tau {
                Some((v, p * (1.0 - thr.accept_prob_at_atom)))
            } else {
                None
            }
        });
        let kept: Vec<_> = kept.filter(|a| a.1 > 0.0).collect();
        if kept.iter().map(|a| a.1).sum::<f64>() <= 0.0 {
            return Err(LabError::ZeroMass);
        }
        Self::from_masses(kept)
    }

    /// Adds `shift` with probability `x` (independent Bernoulli).
    pub fn boosted(&self, shift: f64, x: f64) -> Result<Self> {
        let pairs = self.atoms.iter().flat_map(|&(v, p)| [(v, p * (1.0 - x)), (v + shift, p * x)]);
        Self::from_masses(pairs)
    }
}

/// Product of independent per-element laws, indexed by element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProductDistribution {
    per_element: Vec<DiscreteDistribution>,
}

impl ProductDistribution {
    pub fn new(per_element: Vec<DiscreteDistribution>) -> Result<Self> {
        if per_element.is_empty() {
            return Err(LabError::InvalidDistribution("empty product".into()));
        }
        Ok(Self { per_element })
    }

    pub fn len(&self) -> usize {
        self.per_element.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_element.is_empty()
    }

    pub fn get(&self, e: usize) -> &DiscreteDistribution {
        &self.per_element[e]
    }

    pub fn elements(&self) -> &[DiscreteDistribution] {
        &self.per_element
    }

    pub fn replace(&self, e: usize, dist: DiscreteDistribution) -> Self {
        let mut per_element = self.per_element.clone();
        per_element[e] = dist;
        Self { per_element }
    }

    /// Number of joint outcomes, saturating at `u64::MAX`.
    pub fn joint_support(&self) -> u64 {
        self.per_element
            .iter()
            .fold(1u64, |acc, d| acc.saturating_mul(d.len() as u64))
    }

    /// `E[sum_e w_e]`.
    pub fn expected_sum(&self) -> f64 {
        self.per_element.iter().map(DiscreteDistribution::mean).sum()
    }

    /// Sorted union of all support values.
    pub fn support_union(&self) -> Vec<f64> {
        let mut vals: Vec<f64> = self.per_element.iter().flat_map(|d| d.values()).collect();
        vals.sort_by(f64::total_cmp);
        vals.dedup();
        vals
    }

    /// `Pr[max_e w_e <= x]`.
    pub fn max_cdf(&self, x: f64) -> f64 {
        self.per_element.iter().map(|d| d.cdf(x)).product()
    }

    /// `E[max_e w_e]` by the tail sum `sum_j (v_j - v_{j-1}) Pr[max > v_{j-1}]`.
    pub fn expected_max(&self) -> f64 {
        let mut prev = 0.0;
        let mut total = 0.0;
        for v in self.support_union() {
            total += (v - prev) * (1.0 - self.max_cdf(prev));
            prev = v;
        }
        total
    }

    /// Calls `visit(weights, prob)` for every joint outcome, odometer order
    /// with element 0 varying slowest.
    pub fn for_each_outcome(&self, mut visit: impl FnMut(&[f64], f64)) {
        let n = self.len();
        let mut idx = vec![0usize; n];
        let mut w: Vec<f64> = self.per_element.iter().map(|d| d.atoms[0].0).collect();
        loop {
            let p: f64 = idx
                .iter()
                .zip(&self.per_element)
                .map(|(&i, d)| d.atoms[i].1)
                .product();
            visit(&w, p);
            let mut k = n;
            loop {
                if k == 0 {
                    return;
                }
                k -= 1;
                idx[k] += 1;
                if idx[k] < self.per_element[k].len() {
                    w[k] = self.per_element[k].atoms[idx[k]].0;
                    break;
                }
                idx[k] = 0;
                w[k] = self.per_element[k].atoms[0].0;
            }
        }
    }

    /// Draws every coordinate, in element-index order, from one stream.
    pub fn sample_into(&self, rng: &mut impl Rng, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.per_element.iter().map(|d| d.sample(rng)));
    }

    /// Element-wise truncation at `thr`.
    pub fn truncate(&self, thr: &RandomizedThreshold) -> Result<Self> {
        let per_element = self
            .per_element
            .iter()
            .map(|d| d.truncate(thr))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { per_element })
    }

    /// `Pr[no element exceeds thr]` with independent atom coins.
    pub fn core_probability(&self, thr: &RandomizedThreshold) -> f64 {
        self.per_element.iter().map(|d| thr.below_prob(d)).product()
    }

    /// `Pr[exactly one element exceeds thr]`.
    pub fn tail_probability(&self, thr: &RandomizedThreshold) -> f64 {
        let below: Vec<f64> = self.per_element.iter().map(|d| thr.below_prob(d)).collect();
        (0..below.len())
            .map(|e| {
                let others: f64 = below
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != e)
                    .map(|(_, &b)| b)
                    .product();
                (1.0 - below[e]) * others
            })
            .sum()
    }

    /// Smallest support value `tau` whose product CDF reaches `gamma`, with
    /// the atom coin chosen so the core probability equals `gamma`.
    pub fn solve_gamma_threshold(&self, gamma: f64) -> Result<RandomizedThreshold> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(LabError::bad(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        let union = self.support_union();
        let tau = union
            .iter()
            .copied()
            .find(|&v| self.max_cdf(v) >= gamma - PROB_TOL)
            .unwrap_or_else(|| union[union.len() - 1]);
        let at_tau = self.max_cdf(tau);
        if (at_tau - gamma).abs() <= PROB_TOL {
            return Ok(RandomizedThreshold::new(tau, 0.0));
        }
        // h(q) = prod_e (F_e(tau-) + (1 - q) m_e) decreases from h(0) > gamma to h(1) < gamma.
        let parts: Vec<(f64, f64)> = self
            .per_element
            .iter()
            .map(|d| (d.cdf_below(tau), d.mass_at(tau)))
            .collect();
        let h = |q: f64| parts.iter().map(|&(l, m)| l + (1.0 - q) * m).product::<f64>();
        let (mut lo, mut hi) = (0.0f64, 1.0f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if h(mid) > gamma {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-17 {
                break;
            }
        }
        Ok(RandomizedThreshold::new(tau, 0.5 * (lo + hi)))
    }
}

/// Threshold `tau` plus the probability that a weight exactly at `tau`
/// counts as exceeding it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RandomizedThreshold {
    pub tau: f64,
    pub accept_prob_at_atom: f64,
}

impl RandomizedThreshold {
    pub fn new(tau: f64, accept_prob_at_atom: f64) -> Self {
        Self { tau, accept_prob_at_atom: accept_prob_at_atom.clamp(0.0, 1.0) }
    }

    /// Deterministic threshold: only strictly larger weights exceed.
    pub fn strict(tau: f64) -> Self {
        Self::new(tau, 0.0)
    }

    /// `Pr[w does not exceed]` for one element.
    pub fn below_prob(&self, d: &DiscreteDistribution) -> f64 {
        d.cdf_below(self.tau) + (1.0 - self.accept_prob_at_atom) * d.mass_at(self.tau)
    }

    /// Probability that a realized weight `w` counts as exceeding.
    pub fn exceed_prob(&self, w: f64) -> f64 {
        if w > self.tau {
            1.0
        } else if w == self.tau {
            self.accept_prob_at_atom
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Lane};

    fn d(atoms: &[(f64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution::new(atoms.to_vec()).unwrap()
    }

    #[test]
    fn rejects_bad_atoms() {
        assert!(DiscreteDistribution::new(vec![]).is_err());
        assert!(DiscreteDistribution::new(vec![(-1.0, 1.0)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5), (1.0, 0.5)]).is_err());
        assert!(DiscreteDistribution::new(vec![(2.0, 0.5), (1.0, 0.5)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.5), (2.0, 0.4)]).is_err());
        assert!(DiscreteDistribution::new(vec![(1.0, 0.0), (2.0, 1.0)]).is_err());
    }

    #[test]
    fn sample_point_mass_and_support() {
        let mut rng = stream(1, 0, Lane::Aux(0));
        assert_eq!(d(&[(5.0, 1.0)]).sample(&mut rng), 5.0);
        let box2 = d(&[(0.0, 0.5), (4.0, 0.5)]);
        for _ in 0..1000 {
            let v = box2.sample(&mut rng);
            assert!(v == 0.0 || v == 4.0);
        }
    }

    #[test]
    fn sample_mean_within_three_sigma() {
        let coin = d(&[(0.0, 0.5), (2.0, 0.5)]);
        let mut rng = stream(42, 0, Lane::Aux(0));
        let n = 1_000_000;
        let mean = (0..n).map(|_| coin.sample(&mut rng)).sum::<f64>() / n as f64;
        // sd of one draw is 1
        assert!((mean - 1.0).abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn cdf_steps() {
        assert_eq!(d(&[(1.0, 1.0)]).cdf(0.5), 0.0);
        assert_eq!(d(&[(1.0, 1.0)]).cdf(1.0), 1.0);
        assert!((d(&[(0.0, 0.9), (10.0, 0.1)]).cdf(5.0) - 0.9).abs() < 1e-15);
    }

    #[test]
    fn truncate_cases() {
        let t = d(&[(1.0, 0.5), (3.0, 0.5)]).truncate(&RandomizedThreshold::new(2.0, 0.3)).unwrap();
        assert_eq!(t.atoms(), &[(1.0, 1.0)]);
        assert!(matches!(
            d(&[(1.0, 1.0)]).truncate(&RandomizedThreshold::strict(0.5)),
            Err(LabError::ZeroMass)
        ));
        let t = d(&[(0.0, 0.5), (2.0, 0.25), (4.0, 0.25)])
            .truncate(&RandomizedThreshold::new(2.0, 0.0))
            .unwrap();
        assert_eq!(t.len(), 2);
        assert!((t.atoms()[0].1 - 2.0 / 3.0).abs() < 1e-15);
        assert!((t.atoms()[1].1 - 1.0 / 3.0).abs() < 1e-15);
        // the atom at tau survives with the complementary coin mass
        let t = d(&[(0.0, 0.5), (2.0, 0.5)]).truncate(&RandomizedThreshold::new(2.0, 0.5)).unwrap();
        assert!((t.atoms()[1].1 - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn expected_max_examples() {
        let two = ProductDistribution::new(vec![d(&[(1.0, 1.0)]), d(&[(2.0, 1.0)])]).unwrap();
        assert_eq!(two.expected_max(), 2.0);
        // X1 = 1, X2 = 1/eps w.p. eps: 2 - eps
        let roe = ProductDistribution::new(vec![d(&[(1.0, 1.0)]), d(&[(0.0, 0.5), (2.0, 0.5)])]).unwrap();
        assert!((roe.expected_max() - 1.5).abs() < 1e-15);
        let ex1 = ProductDistribution::new(vec![d(&[(1.0, 1.0)]), d(&[(0.0, 0.5), (4.0, 0.5)])]).unwrap();
        assert!((ex1.expected_max() - 2.5).abs() < 1e-15);
    }

    #[test]
    fn gamma_threshold_examples() {
        let coin = d(&[(0.0, 0.5), (1.0, 0.5)]);
        let one = ProductDistribution::new(vec![coin.clone()]).unwrap();
        assert_eq!(one.solve_gamma_threshold(0.5).unwrap(), RandomizedThreshold::new(0.0, 0.0));

        let point = ProductDistribution::new(vec![d(&[(1.0, 1.0)])]).unwrap();
        let thr = point.solve_gamma_threshold(0.25).unwrap();
        assert_eq!(thr.tau, 1.0);
        assert!((thr.accept_prob_at_atom - 0.75).abs() < 1e-12);

        let iid = ProductDistribution::new(vec![coin.clone(), coin]).unwrap();
        let thr = iid.solve_gamma_threshold(0.25).unwrap();
        assert_eq!(thr.tau, 0.0);
        assert!(thr.accept_prob_at_atom.abs() < 1e-12);

        assert!(iid.solve_gamma_threshold(0.0).is_err());
        assert!(iid.solve_gamma_threshold(1.0).is_err());
    }

    #[test]
    fn json_shape() {
        let x = d(&[(0.0, 0.5), (2.0, 0.5)]);
        let s = serde_json::to_string(&x).unwrap();
        assert_eq!(s, r#"{"atoms":[[0.0,0.5],[2.0,0.5]]}"#);
        let back: DiscreteDistribution = serde_json::from_str(&s).unwrap();
        assert_eq!(back, x);
        assert!(serde_json::from_str::<DiscreteDistribution>(r#"{"atoms":[[0.0,0.5]]}"#).is_err());
    }

    #[test]
    fn tail_probability_single_element_is_complement() {
        let p = ProductDistribution::new(vec![d(&[(0.0, 0.3), (1.0, 0.4), (2.0, 0.3)])]).unwrap();
        let thr = p.solve_gamma_threshold(0.3).unwrap();
        assert!((p.core_probability(&thr) - 0.3).abs() < 1e-9);
        assert!((p.tail_probability(&thr) - 0.7).abs() < 1e-9);
    }
}
