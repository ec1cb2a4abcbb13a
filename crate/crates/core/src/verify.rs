//! Named verification suites: each runs a family of property checks and
//! reports one pass/fail line per check.

use rand::Rng;
use serde::Serialize;

use crate::analysis::{am_gm_gap, blm_tail_check, check_self_bounding, imply_claim, opts_claim_gap, reduction_audit};
use crate::distributions::{DiscreteDistribution, ProductDistribution};
use crate::error::{LabError, Result};
use crate::exec::{map_items, Execution};
use crate::evaluation::{evaluate_exact, event_probabilities, evaluate_exact_random_order, EvalOptions};
use crate::feasibility::FeasibilityFamily;
use crate::instances::{
    bernoulli_boost, gen_example1, gen_example2, gen_example3, gen_iid_k_uniform, gen_mpower, gen_risk, random_instance,
    random_suite, Instance, RandomFamily, RandomSpec,
};
use crate::oracle::{brute_force_optimum, expected_max_enumerated, mpower_rho, secretary_formula};
use crate::policies::{
    always_first, eor_threshold, eor_to_roe, fixed_threshold, optimal_policy, pick, secretary, Objective,
    OnlinePolicy, ReductionParams, RngChance,
};
use crate::rng::{stream, Lane};

pub const SUITES: &[&str] =
    &["distributions", "feasibility", "examples", "gamma", "self_bounding", "blm", "boost", "reductions", "claims"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), passed, detail: detail.into() }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct VerifyConfig {
    pub seed: u64,
    /// Boost probability for the impossibility construction.
    pub x: f64,
    /// Monte Carlo trials for the BLM tables.
    pub trials: u64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        Self { seed: 7, x: 0.05, trials: 100_000 }
    }
}

/// Runs one suite by name, or every suite for `"all"`.
pub fn run_suite(name: &str, cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    match name {
        "all" => {
            let parts = map_items(Execution::default(), SUITES, |s| run_suite(s, cfg));
            let mut out = Vec::new();
            for part in parts {
                out.extend(part?);
            }
            Ok(out)
        }
        "distributions" => distributions_suite(cfg),
        "feasibility" => feasibility_suite(cfg),
        "examples" => examples_suite(),
        "gamma" => gamma_suite(cfg),
        "self_bounding" => self_bounding_suite(cfg),
        "blm" => blm_suite(cfg),
        "boost" => boost_suite(cfg),
        "reductions" => reductions_suite(cfg),
        "claims" => claims_suite(cfg),
        other => Err(LabError::bad(format!("unknown suite {other:?}; expected one of {SUITES:?} or all"))),
    }
}

fn small_spec(family: RandomFamily) -> RandomSpec {
    RandomSpec::new(family, 2, 5, 3)
}

fn distributions_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let draws = 1_000_000u64;
    for (i, inst) in random_suite(cfg.seed, 5, &small_spec(RandomFamily::Single)).iter().enumerate() {
        let gamma = [0.25, 0.5, 0.75, 0.1, 0.9][i];
        let thr = inst.dist().solve_gamma_threshold(gamma)?;
        let mut rng = stream(cfg.seed, i as u64, Lane::Aux(10));
        let mut w = Vec::new();
        let mut core = 0u64;
        for _ in 0..draws {
            inst.dist().sample_into(&mut rng, &mut w);
            if w.iter().all(|&x| x < thr.tau || (x == thr.tau && rng.gen::<f64>() >= thr.accept_prob_at_atom)) {
                core += 1;
            }
        }
        let freq = core as f64 / draws as f64;
        let se = (gamma * (1.0 - gamma) / draws as f64).sqrt();
        out.push(CheckResult::new(
            format!("core frequency {}", inst.label()),
            (freq - gamma).abs() <= 4.0 * se,
            format!("gamma={gamma} empirical={freq:.5} se={se:.5}"),
        ));

        let mut ok = true;
        for d in inst.dist().elements() {
            if let Ok(t) = d.truncate(&thr) {
                let below = thr.below_prob(d);
                let direct: f64 = d
                    .atoms()
                    .iter()
                    .map(|&(v, p)| v * p * (1.0 - thr.exceed_prob(v)))
                    .sum::<f64>()
                    / below;
                ok &= t.values().all(|v| v <= thr.tau) && (t.mean() - direct).abs() <= 1e-12 * direct.max(1.0);
            }
        }
        out.push(CheckResult::new(format!("truncation {}", inst.label()), ok, "support and conditional mean"));

        let a = inst.dist().expected_max();
        let b = expected_max_enumerated(inst.dist());
        out.push(CheckResult::new(
            format!("expected max {}", inst.label()),
            (a - b).abs() <= 1e-12 * b.max(1.0),
            format!("tail-sum={a} enumeration={b}"),
        ));
    }
    Ok(out)
}

fn feasibility_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = stream(cfg.seed, 0, Lane::Aux(11));
    let families = [
        FeasibilityFamily::single(6)?,
        FeasibilityFamily::k_uniform(6, 3)?,
        FeasibilityFamily::partition(vec![vec![0, 3], vec![1, 4, 5], vec![2]])?,
        FeasibilityFamily::explicit(6, vec![vec![0, 1, 2], vec![2, 3], vec![1, 4, 5]])?,
    ];
    for fam in &families {
        let (mut mono, mut lip, mut brute) = (true, true, true);
        for _ in 0..1000 {
            let u: Vec<f64> = (0..6).map(|_| rng.gen_range(0.0..5.0)).collect();
            let v: Vec<f64> = u.iter().map(|x| x + rng.gen_range(0.0..2.0)).collect();
            let l1: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
            let (fu, fv) = (fam.offline_value(&u), fam.offline_value(&v));
            mono &= fu <= fv + 1e-12;
            lip &= (fu - fv).abs() <= l1 + 1e-12;
            let (set, val) = fam.offline_optimum(&u);
            brute &= fam.is_feasible(&set)? && (val - brute_force_optimum(fam, &u)).abs() <= 1e-12;
        }
        out.push(CheckResult::new(format!("monotone {}", fam.kind()), mono, "1000 ordered pairs"));
        out.push(CheckResult::new(format!("1-Lipschitz {}", fam.kind()), lip, "1000 pairs"));
        out.push(CheckResult::new(format!("optimum vs brute force {}", fam.kind()), brute, "1000 points"));
    }
    Ok(out)
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn examples_suite() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for eps in [0.5, 0.1, 0.01] {
        let inst = gen_example1(eps)?;
        let thr = evaluate_exact(&inst, &fixed_threshold(&inst, 1.0 + eps / 2.0, 0.0)?)?;
        let first = evaluate_exact(&inst, &always_first(&inst))?;
        let want = (1.0 - eps) + eps * eps / (1.0 + 2.0 * eps);
        out.push(CheckResult::new(
            format!("example1 eps={eps}"),
            close(thr.eor, eps, 1e-12) && close(first.eor, want, 1e-12),
            format!("threshold eor={} always-first eor={} (want {want})", thr.eor, first.eor),
        ));
    }
    let inst = gen_example3(0.1)?;
    let r = evaluate_exact(&inst, &always_first(&inst))?;
    out.push(CheckResult::new(
        "example3 eps=0.1",
        close(r.eor, 0.9 + 0.1f64.powi(3), 1e-12) && close(r.roe, 1.0 / 10.9, 1e-12) && r.eoir >= 10.0,
        format!("eor={} roe={} eoir={}", r.eor, r.roe, r.eoir),
    ));
    let inst = gen_risk(0.25)?;
    let r = evaluate_exact(&inst, &pick(&inst, 1)?)?;
    let u = r.expected_utility.unwrap_or(f64::NAN);
    out.push(CheckResult::new(
        "risk eps=0.25",
        close(u, 2.0, 1e-12) && r.roe <= 0.25 + 1e-12 && r.eor <= 0.5 + 1e-12,
        format!("utility={u} roe={} eor={}", r.roe, r.eor),
    ));
    let inst = gen_mpower(5, 1e6)?;
    let r = evaluate_exact(&inst, &fixed_threshold(&inst, 1.0, 1.0)?)?;
    out.push(CheckResult::new(
        "mpower n=5 threshold at 1",
        close(r.pbm, mpower_rho(5, 1), 1e-12),
        format!("pbm={} rho1={}", r.pbm, mpower_rho(5, 1)),
    ));
    let inst = secretary_instance(4)?;
    let r = evaluate_exact_random_order(&inst, &secretary(&inst, 1)?, &EvalOptions::default())?;
    out.push(CheckResult::new(
        "secretary n=4 r=1",
        close(r.pbm, 11.0 / 24.0, 1e-12),
        format!("win={} formula={}", r.pbm, secretary_formula(4, 1)),
    ));
    Ok(out)
}

/// `n` point masses `1..=n` under a single-choice constraint.
pub fn secretary_instance(n: usize) -> Result<Instance> {
    let dists = (1..=n).map(|v| DiscreteDistribution::point(v as f64)).collect::<Result<Vec<_>>>()?;
    Instance::new(format!("distinct(n={n})"), FeasibilityFamily::single(n)?, ProductDistribution::new(dists)?)
}

fn gamma_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let gammas = [0.1, 0.25, 0.5, (-1.0f64).exp(), 0.9];
    let suite = random_suite(cfg.seed, 50, &RandomSpec::new(RandomFamily::Structured, 1, 6, 4));
    for &g in &gammas {
        let mut worst_core: f64 = 0.0;
        let mut worst_tail = f64::INFINITY;
        for inst in &suite {
            let ev = event_probabilities(inst, g)?;
            worst_core = worst_core.max((ev.p_core - g).abs());
            worst_tail = worst_tail.min(ev.p_tail - g * (1.0 / g).ln());
        }
        out.push(CheckResult::new(
            format!("gamma lemma gamma={g:.4}"),
            worst_core <= 1e-9 && worst_tail >= -1e-9,
            format!("max |p_core-gamma|={worst_core:.2e} min tail slack={worst_tail:.3e}"),
        ));
    }
    Ok(out)
}

fn self_bounding_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut fams = vec![
        FeasibilityFamily::single(6)?,
        FeasibilityFamily::k_uniform(5, 2)?,
        FeasibilityFamily::k_uniform(8, 4)?,
        FeasibilityFamily::partition(vec![vec![0, 1], vec![2, 3, 4], vec![5]])?,
    ];
    for i in 0..50 {
        let inst = random_instance(cfg.seed + 1000 + i, &RandomSpec::new(RandomFamily::Explicit, 2, 8, 1));
        fams.push(inst.family().clone());
    }
    let mut out = Vec::new();
    let mut explicit_ok = true;
    let mut explicit_worst = (0.0f64, 0.0f64);
    for (i, fam) in fams.iter().enumerate() {
        let r = check_self_bounding(fam, 1.5, 1000, cfg.seed + i as u64)?;
        if i < 4 {
            out.push(CheckResult::new(
                format!("self-bounding {} n={}", fam.kind(), fam.ground_size()),
                r.pass,
                format!("cond1={:.2e} cond2={:.2e}", r.max_violation_cond1, r.max_violation_cond2),
            ));
        } else {
            explicit_ok &= r.pass;
            explicit_worst = (explicit_worst.0.max(r.max_violation_cond1), explicit_worst.1.max(r.max_violation_cond2));
        }
    }
    out.push(CheckResult::new(
        "self-bounding 50 random explicit families",
        explicit_ok,
        format!("cond1={:.2e} cond2={:.2e}", explicit_worst.0, explicit_worst.1),
    ));
    Ok(out)
}

fn blm_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for inst in [gen_example2(20)?, gen_iid_k_uniform(20, 5)?] {
        let table = blm_tail_check(&inst, 0.5, &[], cfg.trials, cfg.seed)?;
        for row in &table.rows {
            out.push(CheckResult::new(
                format!("blm {} z={:.3}", inst.label(), row.z),
                row.upper_pass && row.lower_pass,
                format!(
                    "E[g]={:.4} upper {:.5}<={:.5} lower {}<={}",
                    table.mean_g,
                    row.upper_empirical,
                    row.upper_bound,
                    row.lower_empirical.map_or("-".into(), |x| format!("{x:.5}")),
                    row.lower_bound.map_or("-".into(), |x| format!("{x:.5}")),
                ),
            ));
        }
    }
    Ok(out)
}

/// Boost construction on `example2(3)`: returns
/// `(RoE of always-target on boosted, EoR* boosted, EoR* original)`.
pub fn boost_demo(x: f64, target: usize) -> Result<(f64, f64, f64)> {
    let base = gen_example2(3)?;
    let boosted = bernoulli_boost(&base, x, target)?;
    let roe_target = evaluate_exact(&boosted, &pick(&boosted, target)?)?.roe;
    let eor_boosted = optimal_policy(&boosted, Objective::Eor)?.value();
    let eor_base = optimal_policy(&base, Objective::Eor)?.value();
    Ok((roe_target, eor_boosted, eor_base))
}

fn boost_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let (roe, eb, e0) = boost_demo(cfg.x, 0)?;
    Ok(vec![
        CheckResult::new("boost always-target RoE >= 1/2", roe >= 0.5, format!("roe={roe}")),
        CheckResult::new(
            format!("boost EoR <= x + EoR (x={})", cfg.x),
            eb <= cfg.x + e0 + 1e-9,
            format!("boosted={eb} original={e0}"),
        ),
    ])
}

fn reductions_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let spec = small_spec(RandomFamily::Structured);
    let suite = random_suite(cfg.seed + 500, 20, &spec);
    let (mut ok12, mut ok68, mut audit_ok) = (true, true, true);
    let (mut worst12, mut worst68) = (f64::INFINITY, f64::INFINITY);
    for inst in &suite {
        let audit = reduction_audit(inst, "optimal_roe", ReductionParams::default(), cfg.seed)?;
        ok12 &= audit.eor >= audit.alpha_over_12 - 1e-9;
        audit_ok &= audit.constraint_satisfied && audit.branch_bound_holds;
        worst12 = worst12.min(audit.eor - audit.alpha_over_12);
        let comp = eor_to_roe(inst, "optimal_eor", None, cfg.seed)?;
        let r = evaluate_exact(inst, &comp)?;
        ok68 &= r.roe >= comp.guarantee() - 1e-9;
        worst68 = worst68.min(r.roe - comp.guarantee());
    }
    Ok(vec![
        CheckResult::new("roe_to_eor eor >= alpha/12", ok12, format!("min slack {worst12:.4}")),
        CheckResult::new("roe_to_eor audit", audit_ok, "constraint on c and active branch bound"),
        CheckResult::new("eor_to_roe roe >= alpha/68", ok68, format!("min slack {worst68:.4}")),
    ])
}

fn random_law(rng: &mut impl Rng) -> Result<DiscreteDistribution> {
    let k = rng.gen_range(1..=4);
    DiscreteDistribution::from_masses((0..k).map(|_| (rng.gen_range(0.01..5.0), rng.gen_range(0.1..1.0))))
}

fn claims_suite(cfg: &VerifyConfig) -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    let mut rng = stream(cfg.seed, 0, Lane::Aux(12));

    let (mut j1, mut j2) = (true, true);
    for _ in 0..1000 {
        let (u, v) = (random_law(&mut rng)?, random_law(&mut rng)?);
        let a = rng.gen_range(0.01..5.0);
        let lhs1: f64 = u.atoms().iter().map(|&(x, p)| p * a / (a + x)).sum();
        j1 &= lhs1 >= a / (a + u.mean()) - 1e-12;
        let lhs2: f64 =
            u.atoms().iter().flat_map(|&(x, p)| v.atoms().iter().map(move |&(y, q)| p * q * x / (a + y))).sum();
        j2 &= lhs2 >= u.mean() / (a + v.mean()) - 1e-12;
    }
    out.push(CheckResult::new("jensen E[a/(a+u)] >= a/(a+E[u])", j1, "1000 random laws"));
    out.push(CheckResult::new("jensen E[u/(a+v)] >= E[u]/(a+E[v])", j2, "1000 random laws"));

    let mut amgm = f64::INFINITY;
    for _ in 0..1000 {
        let n = rng.gen_range(1..=8);
        let ps: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.99)).collect();
        let scale: f64 = ps.iter().map(|p| (1.0 - p) / p).sum::<f64>().max(1.0);
        amgm = amgm.min(am_gm_gap(&ps) / scale);
    }
    out.push(CheckResult::new("am-gm", amgm >= -1e-12, format!("min relative gap {amgm:.3e}")));

    let mut opts = f64::NEG_INFINITY;
    for i in 0..200 {
        let inst = random_instance(cfg.seed + 2000 + i, &RandomSpec::new(RandomFamily::Structured, 2, 6, 4));
        let thr = inst.dist().solve_gamma_threshold(rng.gen_range(0.05..0.95))?;
        let Ok(truncated) = inst.dist().truncate(&thr) else { continue };
        for _ in 0..20 {
            let mut w = Vec::new();
            inst.dist().sample_into(&mut rng, &mut w);
            let w_bar: Vec<f64> =
                w.iter().enumerate().map(|(e, &x)| if x > thr.tau { truncated.get(e).sample(&mut rng) } else { x }).collect();
            opts = opts.max(opts_claim_gap(inst.family(), &w, &w_bar, thr.tau));
        }
    }
    out.push(CheckResult::new("opts f(w) <= f(w_bar) + stars", opts <= 1e-12, format!("max gap {opts:.3e}")));

    let mut imply_ok = true;
    let mut worst = f64::INFINITY;
    for inst in random_suite(cfg.seed + 3000, 30, &small_spec(RandomFamily::Structured)) {
        let policies: Vec<Box<dyn OnlinePolicy>> = vec![
            Box::new(always_first(&inst)),
            Box::new(optimal_policy(&inst, Objective::Eor)?),
            Box::new(crate::policies::half_expected_max(&inst)?),
        ];
        for p in policies {
            let r = evaluate_exact(&inst, p.as_ref())?;
            let (alpha, prob) = imply_claim(&r);
            imply_ok &= prob >= alpha / 2.0 - 1e-9;
            worst = worst.min(prob - alpha / 2.0);
        }
    }
    out.push(CheckResult::new("imply Pr[ratio >= a/2] >= a/2", imply_ok, format!("min slack {worst:.4}")));

    let mut chance = RngChance(stream(cfg.seed, 1, Lane::Policy));
    let inst = gen_example1(0.5)?;
    let eor = eor_threshold(&inst)?;
    let trace = crate::evaluation::run_trace(&inst, &eor, &[1.0, 4.0], &[0, 1], &mut chance)?;
    out.push(CheckResult::new("trace feasibility", inst.family().is_feasible(&trace.selected)?, "example1"));
    Ok(out)
}
