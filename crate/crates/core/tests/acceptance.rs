//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::f64::consts::E;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use prophet_lab::analysis::{blm_tail_check, check_self_bounding, imply_claim, reduction_audit};
use prophet_lab::evaluation::{
    evaluate_auto, evaluate_exact, evaluate_exact_random_order, evaluate_monte_carlo_with, event_probabilities, pbm_p,
    EvalOptions,
};
use prophet_lab::exec::{map_items, Execution};
use prophet_lab::feasibility::FeasibilityFamily;
use prophet_lab::instances::{
    gen_example1, gen_example2, gen_example3, gen_iid_k_uniform, gen_mpower, gen_pbmp_pairs, gen_risk, gen_roe_ub,
    random_instance, random_suite, Instance, RandomFamily, RandomSpec,
};
use prophet_lab::oracle::mpower_rho;
use prophet_lab::policies::{
    always_first, catch_max_pair, eor_threshold, eor_to_roe, fixed_threshold, half_expected_max, measured_roe,
    optimal_policy, pick, random_pair, sample_threshold, secretary, single_sample_roe_to_eor, Objective,
    OnlinePolicy, PolicyRef, ReductionParams,
};
use prophet_lab::verify::{boost_demo, secretary_instance};
use prophet_lab::{MetricReport, Mode, Result};

const SEED: u64 = 20_240_601;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

/// Collects every exact report for the imply check.
#[derive(Default)]
struct Ledger {
    exact: Vec<MetricReport>,
}

impl Ledger {
    fn exact(&mut self, inst: &Instance, policy: &dyn OnlinePolicy) -> Result<MetricReport> {
        let r = evaluate_exact(inst, policy)?;
        self.exact.push(r.clone());
        Ok(r)
    }
}

fn single_suite() -> Vec<Instance> {
    random_suite(SEED, 200, &RandomSpec::new(RandomFamily::Single, 1, 6, 4))
}

fn reduction_suite() -> Vec<Instance> {
    let kinds = [RandomFamily::Single, RandomFamily::KUniform, RandomFamily::Partition];
    (0..100u64)
        .map(|i| random_instance(SEED + 10_000 + i, &RandomSpec::new(kinds[i as usize % 3], 2, 8, 4).max_support(100_000)))
        .collect()
}

fn timed(limit: Duration, elapsed: Duration, mut o: Outcome) -> Outcome {
    o.passed &= elapsed <= limit;
    o.detail = format!("{} [{:.2}s, limit {}s]", o.detail, elapsed.as_secs_f64(), limit.as_secs());
    o
}

fn c01_prophet_half(ledger: &mut Ledger) -> Result<Outcome> {
    let start = Instant::now();
    let suite = single_suite();
    let reports = map_items(Execution::default(), &suite, |inst| -> Result<MetricReport> {
        evaluate_exact(inst, &half_expected_max(inst)?)
    });
    let mut worst = f64::INFINITY;
    for r in reports {
        let r = r?;
        worst = worst.min(r.roe);
        ledger.exact.push(r);
    }
    let o = outcome(worst >= 0.5 - 1e-9, format!("min RoE {worst:.6} over 200 instances"));
    Ok(timed(Duration::from_secs(5), start.elapsed(), o))
}

fn c02_roe_tightness(ledger: &mut Ledger) -> Result<Outcome> {
    let eps = 0.01;
    let inst = gen_roe_ub(eps)?;
    let opt = optimal_policy(&inst, Objective::Roe)?;
    let r = ledger.exact(&inst, &opt)?;
    let bound = 1.0 / (2.0 - eps);
    Ok(outcome(r.roe <= bound + 1e-9, format!("RoE* {:.9} <= {bound:.9}", r.roe)))
}

fn c03_eor_one_over_e(ledger: &mut Ledger) -> Result<Outcome> {
    let suite = single_suite();
    let reports = map_items(Execution::default(), &suite, |inst| -> Result<MetricReport> {
        evaluate_exact(inst, &eor_threshold(inst)?)
    });
    let mut worst = f64::INFINITY;
    for r in reports {
        let r = r?;
        worst = worst.min(r.eor);
        ledger.exact.push(r);
    }
    Ok(outcome(worst >= 1.0 / E - 1e-9, format!("min EoR {worst:.6} vs 1/e {:.6}", 1.0 / E)))
}

fn c04_mpower(ledger: &mut Ledger) -> Result<Outcome> {
    let (n, m) = (50usize, 1e6);
    let inst = gen_mpower(n, m)?;
    let mut best: Option<MetricReport> = None;
    for v in inst.dist().support_union() {
        let r = evaluate_exact(&inst, &fixed_threshold(&inst, v, 1.0)?)?;
        if best.as_ref().is_none_or(|b| r.eor > b.eor) {
            best = Some(r);
        }
    }
    let best = best.expect("nonempty support");
    ledger.exact.push(best.clone());
    let rho = mpower_rho(n, 1);
    let slack = 1e-6 + n as f64 / m;
    let pass = close(best.eor, rho, slack) && best.eor <= best.pbm + n as f64 / m;
    Ok(outcome(pass, format!("{}: EoR {:.7} PbM {:.7} rho1 {rho:.7}", best.policy, best.eor, best.pbm)))
}

fn c05_example1(ledger: &mut Ledger) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for eps in [0.5, 0.1, 0.01] {
        let inst = gen_example1(eps)?;
        let thr = ledger.exact(&inst, &fixed_threshold(&inst, 1.0 + eps / 2.0, 0.0)?)?;
        let first = ledger.exact(&inst, &always_first(&inst))?;
        let want = (1.0 - eps) + eps * eps / (1.0 + 2.0 * eps);
        pass &= close(thr.eor, eps, 1e-12) && close(first.eor, want, 1e-12);
        detail.push(format!("eps={eps}: {:.3e}/{:.3e}", thr.eor - eps, first.eor - want));
    }
    Ok(outcome(pass, format!("errors {}", detail.join(", "))))
}

fn c06_example3(ledger: &mut Ledger) -> Result<Outcome> {
    let eps: f64 = 0.1;
    let inst = gen_example3(eps)?;
    let r = ledger.exact(&inst, &always_first(&inst))?;
    // two outcomes: w2 small (ratio 1) or w2 = 1/eps^2 (ratio eps^2)
    let want_eor = (1.0 - eps) + eps * eps * eps;
    let want_roe = 1.0 / ((1.0 - eps) + 1.0 / eps);
    let pass = close(r.eor, want_eor, 1e-12) && close(r.roe, want_roe, 1e-12) && r.eoir >= 1.0 / eps;
    Ok(outcome(pass, format!("EoR {} RoE {} EoIR {}", r.eor, r.roe, r.eoir)))
}

fn c07_roe_to_eor() -> Result<Outcome> {
    let start = Instant::now();
    let suite = reduction_suite();
    let audits = map_items(Execution::default(), &suite, |inst| {
        reduction_audit(inst, "optimal_roe", ReductionParams::default(), SEED)
    });
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for a in audits {
        let a = a?;
        pass &= a.eor >= a.alpha_over_12 - 1e-9;
        worst = worst.min(a.eor - a.alpha_over_12);
    }
    let o = outcome(pass, format!("min EoR - alpha/12 = {worst:.5} over {} instances", suite.len()));
    Ok(timed(Duration::from_secs(60), start.elapsed(), o))
}

fn c08_eor_to_roe(ledger: &mut Ledger) -> Result<Outcome> {
    let suite = reduction_suite();
    let rows = map_items(Execution::default(), &suite, |inst| -> Result<(MetricReport, f64)> {
        let composite = eor_to_roe(inst, "optimal_eor", None, SEED)?;
        Ok((evaluate_exact(inst, &composite)?, composite.alpha()))
    });
    let mut worst = f64::INFINITY;
    let mut pass = true;
    for row in rows {
        let (r, alpha) = row?;
        pass &= r.roe >= alpha / 68.0 - 1e-9;
        worst = worst.min(r.roe - alpha / 68.0);
        ledger.exact.push(r);
    }
    Ok(outcome(pass, format!("min RoE - alpha/68 = {worst:.5}")))
}

fn c09_gamma_lemma() -> Result<Outcome> {
    let suite = random_suite(SEED + 20_000, 50, &RandomSpec::new(RandomFamily::Structured, 1, 6, 4));
    let mut core_err: f64 = 0.0;
    let mut tail_slack = f64::INFINITY;
    for g in [0.1, 0.25, 0.5, 1.0 / E, 0.9] {
        for inst in &suite {
            let ev = event_probabilities(inst, g)?;
            core_err = core_err.max((ev.p_core - g).abs());
            tail_slack = tail_slack.min(ev.p_tail - g * (1.0 / g).ln());
        }
    }
    Ok(outcome(
        core_err <= 1e-9 && tail_slack >= -1e-9,
        format!("max |Pr[E0]-gamma| {core_err:.2e}, min Pr[E1] slack {tail_slack:.4}"),
    ))
}

fn c10_self_bounding() -> Result<Outcome> {
    let start = Instant::now();
    let mut families = vec![
        FeasibilityFamily::single(8)?,
        FeasibilityFamily::k_uniform(8, 3)?,
        FeasibilityFamily::partition(vec![vec![0, 1, 2], vec![3, 4], vec![5, 6, 7]])?,
    ];
    for i in 0..50 {
        families.push(random_instance(SEED + 30_000 + i, &RandomSpec::new(RandomFamily::Explicit, 2, 8, 1)).family().clone());
    }
    let reports = map_items(Execution::default(), &families, |f| check_self_bounding(f, 1.0, 1000, SEED));
    let mut worst: f64 = 0.0;
    let mut pass = true;
    for r in reports {
        let r = r?;
        pass &= r.pass;
        worst = worst.max(r.max_violation_cond1).max(r.max_violation_cond2);
    }
    let o = outcome(pass, format!("{} families, max violation {worst:.2e}", families.len()));
    Ok(timed(Duration::from_secs(30), start.elapsed(), o))
}

fn c11_blm() -> Result<Outcome> {
    let mut pass = true;
    let mut rows = 0;
    for inst in [gen_example2(20)?, gen_iid_k_uniform(20, 5)?] {
        let t = blm_tail_check(&inst, 0.5, &[], 100_000, SEED)?;
        pass &= t.pass() && t.rows.len() == 5;
        rows += t.rows.len();
    }
    Ok(outcome(pass, format!("{rows} grid points within 4 SE of the bounds")))
}

fn c12_pbm_collapse(ledger: &mut Ledger) -> Result<Outcome> {
    let mut pass = true;
    let mut detail = Vec::new();
    for n in 1..=3 {
        let inst = gen_example2(n)?;
        let want = 0.5f64.powi(n as i32);
        let opt = optimal_policy(&inst, Objective::Pbm)?;
        ledger.exact(&inst, &opt)?;
        let first = ledger.exact(&inst, &always_first(&inst))?;
        pass &= close(opt.value(), want, 1e-12) && close(first.pbm, want, 1e-12) && first.eor >= 2.0 / 3.0;
        detail.push(format!("n={n}: PbM* {} first PbM {} EoR {:.4}", opt.value(), first.pbm, first.eor));
    }
    Ok(outcome(pass, detail.join("; ")))
}

fn c13_boost() -> Result<Outcome> {
    let x = 0.05;
    let (roe, boosted, base) = boost_demo(x, 0)?;
    Ok(outcome(
        roe >= 0.5 && boosted <= x + base + 1e-9,
        format!("always-target RoE {roe:.4}; EoR* boosted {boosted:.4} <= {x} + {base:.4}"),
    ))
}

fn c14_imply(ledger: &Ledger) -> Outcome {
    let mut worst = f64::INFINITY;
    for r in &ledger.exact {
        let (alpha, p) = imply_claim(r);
        worst = worst.min(p - alpha / 2.0);
    }
    outcome(worst >= -1e-9, format!("{} exact reports, min slack {worst:.5}", ledger.exact.len()))
}

fn c15_secretary() -> Result<Outcome> {
    let inst = secretary_instance(4)?;
    let exact = evaluate_exact_random_order(&inst, &secretary(&inst, 1)?, &EvalOptions::default())?;
    let big = secretary_instance(100)?;
    let opts = EvalOptions { random_order: true, ..EvalOptions::default() };
    let mc = evaluate_monte_carlo_with(&big, &secretary(&big, 36)?, 1_000_000, SEED, &opts)?;
    Ok(outcome(
        close(exact.pbm, 11.0 / 24.0, 1e-12) && close(mc.pbm, 0.371, 0.005),
        format!("n=4 r=1 win {:.12}; n=100 r=36 win {:.4}", exact.pbm, mc.pbm),
    ))
}

fn c16_risk(ledger: &mut Ledger) -> Result<Outcome> {
    let eps: f64 = 0.25;
    let inst = gen_risk(eps)?;
    let r = ledger.exact(&inst, &pick(&inst, 1)?)?;
    let u = r.expected_utility.unwrap_or(f64::NAN);
    Ok(outcome(
        close(u, 2.0, 1e-12) && r.roe <= eps.sqrt() / 2.0 && r.eor <= eps.sqrt(),
        format!("utility {u}; RoE {:.4} <= {}; EoR {:.4} <= {}", r.roe, eps.sqrt() / 2.0, r.eor, eps.sqrt()),
    ))
}

fn c17_pbm_p() -> Result<Outcome> {
    let inst = gen_pbmp_pairs(4, 8)?;
    let mode = Mode::MonteCarlo { trials: 100_000, seed: SEED };
    let catch = pbm_p(&inst, &catch_max_pair(&inst, 1.0 / E)?, mode)?;
    let pair = pbm_p(&inst, &random_pair(&inst)?, mode)?;
    Ok(outcome(catch <= 0.27 && pair <= 0.27, format!("catch-max {catch:.4}, random pair {pair:.4}")))
}

fn c18_single_sample() -> Result<Outcome> {
    let suite = reduction_suite();
    let rows = map_items(Execution::default(), &suite, |inst| -> Result<(f64, f64)> {
        let sub: PolicyRef = Arc::new(sample_threshold(inst));
        let alpha = measured_roe(inst, &sub, SEED)?;
        let eor = evaluate_auto(inst, &single_sample_roe_to_eor(inst)?, SEED)?.eor;
        Ok((alpha, eor))
    });
    let mut pass = true;
    let mut ratios = Vec::new();
    for row in rows {
        let (alpha, eor) = row?;
        pass &= eor >= alpha / 144.0 - 1e-9;
        ratios.push(if alpha > 0.0 { eor / alpha } else { f64::INFINITY });
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = ratios.iter().filter(|r| r.is_finite()).sum::<f64>() / ratios.len() as f64;
    Ok(outcome(pass, format!("EoR/alpha min {min:.4} mean {mean:.4} (floor {:.5})", 1.0 / 144.0)))
}

fn run(name: &'static str, f: impl FnOnce() -> Result<Outcome>) -> (&'static str, Result<Outcome>, Duration) {
    let start = Instant::now();
    let r = f();
    (name, r, start.elapsed())
}

fn main() -> ExitCode {
    let mut ledger = Ledger::default();
    let mut results = vec![
        run("1 prophet threshold RoE >= 1/2", || c01_prophet_half(&mut ledger)),
        run("2 RoE upper bound 1/(2-eps)", || c02_roe_tightness(&mut ledger)),
        run("3 EoR threshold >= 1/e", || c03_eor_one_over_e(&mut ledger)),
        run("4 M-power EoR and PbM", || c04_mpower(&mut ledger)),
        run("5 example 1", || c05_example1(&mut ledger)),
        run("6 example 3", || c06_example3(&mut ledger)),
        run("7 roe_to_eor >= alpha/12", c07_roe_to_eor),
        run("8 eor_to_roe >= alpha/68", || c08_eor_to_roe(&mut ledger)),
        run("9 gamma lemma", c09_gamma_lemma),
        run("10 self-bounding", c10_self_bounding),
        run("11 BLM tails", c11_blm),
        run("12 PbM collapse", || c12_pbm_collapse(&mut ledger)),
        run("13 boost construction", c13_boost),
        run("16 risk example", || c16_risk(&mut ledger)),
    ];
    results.insert(13, run("14 imply claim", || Ok(c14_imply(&ledger))));
    results.insert(14, run("15 secretary", c15_secretary));
    results.push(run("17 PbM_p pairs", c17_pbm_p));
    results.push(run("18 single sample", c18_single_sample));

    let mut failed = 0;
    for (name, r, took) in results {
        let (passed, detail) = match r {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !passed {
            failed += 1;
        }
        println!("{} criterion {name}: {detail} ({:.2}s)", if passed { "PASS" } else { "FAIL" }, took.as_secs_f64());
    }
    println!("acceptance: {} passed, {failed} failed", 18 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
