use proptest::prelude::*;
use proptest::test_runner::{Config, RngSeed};

use prophet_lab::evaluation::{evaluate_exact, evaluate_exact_with, evaluate_monte_carlo_with, run_trace, EvalOptions};
use prophet_lab::exec::Execution;
use prophet_lab::feasibility::FeasibilityFamily;
use prophet_lab::instances::{random_instance, Instance, RandomFamily, RandomSpec};
use prophet_lab::oracle::{brute_force_optimum, exhaustive_best, expected_max_enumerated};
use prophet_lab::policies::{library_policies, optimal_policy, Objective, OnlinePolicy, RngChance};
use prophet_lab::rng::{stream, Lane};

fn config(cases: u32) -> Config {
    Config { cases, rng_seed: RngSeed::Fixed(0x5eed), failure_persistence: None, ..Config::default() }
}

fn small(seed: u64, family: RandomFamily) -> Instance {
    random_instance(seed, &RandomSpec::new(family, 2, 4, 3))
}

fn family_kind() -> impl Strategy<Value = RandomFamily> {
    prop_oneof![
        Just(RandomFamily::Single),
        Just(RandomFamily::KUniform),
        Just(RandomFamily::Partition),
        Just(RandomFamily::Explicit),
    ]
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn truncation_support_and_mean(seed in 0u64..1_000_000, gamma in 0.05f64..0.95) {
        let inst = small(seed, RandomFamily::Single);
        let thr = inst.dist().solve_gamma_threshold(gamma).unwrap();
        for d in inst.dist().elements() {
            let below = thr.below_prob(d);
            match d.truncate(&thr) {
                Ok(t) => {
                    let direct: f64 =
                        d.atoms().iter().map(|&(v, p)| v * p * (1.0 - thr.exceed_prob(v))).sum::<f64>() / below;
                    prop_assert!(t.values().all(|v| v <= thr.tau));
                    prop_assert!((t.mean() - direct).abs() <= 1e-12 * direct.max(1.0));
                }
                Err(_) => prop_assert!(below <= 1e-12),
            }
        }
    }

    #[test]
    fn gamma_threshold_hits_core_probability(seed in 0u64..1_000_000, gamma in 0.01f64..0.99) {
        let inst = small(seed, RandomFamily::Single);
        let thr = inst.dist().solve_gamma_threshold(gamma).unwrap();
        prop_assert!((inst.dist().core_probability(&thr) - gamma).abs() <= 1e-9);
    }

    #[test]
    fn expected_max_tail_sum_matches_enumeration(seed in 0u64..1_000_000) {
        let inst = random_instance(seed, &RandomSpec::new(RandomFamily::Single, 1, 6, 4));
        let a = inst.dist().expected_max();
        let b = expected_max_enumerated(inst.dist());
        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
    }

    #[test]
    fn json_round_trip_is_bit_identical(seed in 0u64..1_000_000, kind in family_kind()) {
        let inst = small(seed, kind);
        let back = Instance::from_json(&inst.to_json().unwrap()).unwrap();
        prop_assert_eq!(&back, &inst);
        for (a, b) in inst.dist().elements().iter().zip(back.dist().elements()) {
            for (&(v, p), &(v2, p2)) in a.atoms().iter().zip(b.atoms()) {
                prop_assert_eq!(v.to_bits(), v2.to_bits());
                prop_assert_eq!(p.to_bits(), p2.to_bits());
            }
        }
    }
}

fn weights(n: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(0.0f64..10.0, n), prop::collection::vec(0.0f64..3.0, n))
        .prop_map(|(u, d)| {
            let v = u.iter().zip(&d).map(|(a, b)| a + b).collect();
            (u, v)
        })
}

fn structured_family(n: usize) -> impl Strategy<Value = FeasibilityFamily> {
    prop_oneof![
        Just(FeasibilityFamily::single(n).unwrap()),
        (1..=n).prop_map(move |k| FeasibilityFamily::k_uniform(n, k).unwrap()),
        prop::collection::vec(0..3usize, n).prop_map(move |labels| {
            let mut blocks = vec![Vec::new(); 3];
            for (e, b) in labels.into_iter().enumerate() {
                blocks[b].push(e);
            }
            blocks.retain(|b| !b.is_empty());
            FeasibilityFamily::partition(blocks).unwrap()
        }),
    ]
}

proptest! {
    #![proptest_config(config(256))]

    #[test]
    fn offline_value_monotone_and_lipschitz(
        (fam, (u, v)) in (2usize..=12).prop_flat_map(|n| (structured_family(n), weights(n)))
    ) {
        let (fu, fv) = (fam.offline_value(&u), fam.offline_value(&v));
        let l1: f64 = u.iter().zip(&v).map(|(a, b)| (a - b).abs()).sum();
        prop_assert!(fu <= fv + 1e-12);
        prop_assert!((fu - fv).abs() <= l1 + 1e-12);
    }

    #[test]
    fn structured_optimum_matches_brute_force(
        (fam, (u, _)) in (1usize..=12).prop_flat_map(|n| (structured_family(n), weights(n)))
    ) {
        let (set, val) = fam.offline_optimum(&u);
        prop_assert!(fam.is_feasible(&set).unwrap());
        let set_value: f64 = set.iter().map(|&e| u[e]).sum();
        prop_assert!((set_value - val).abs() <= 1e-12);
        prop_assert!((val - brute_force_optimum(&fam, &u)).abs() <= 1e-12);
    }
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn optimal_dominates_library(seed in 0u64..1_000_000, kind in family_kind()) {
        let inst = small(seed, kind);
        let reports: Vec<_> =
            library_policies(&inst).iter().map(|p| evaluate_exact(&inst, p.as_ref()).unwrap()).collect();
        for obj in [Objective::Roe, Objective::Eor, Objective::Pbm] {
            let opt = optimal_policy(&inst, obj).unwrap();
            let own = evaluate_exact(&inst, &opt).unwrap();
            let own_value = match obj {
                Objective::Roe => own.expected_value,
                Objective::Eor => own.eor,
                Objective::Pbm => own.pbm,
            };
            prop_assert!((own_value - opt.value()).abs() <= 1e-9 * opt.value().max(1.0));
            for r in &reports {
                let v = match obj {
                    Objective::Roe => r.expected_value,
                    Objective::Eor => r.eor,
                    Objective::Pbm => r.pbm,
                };
                prop_assert!(v <= opt.value() + 1e-12 * opt.value().max(1.0), "{} beats {}", r.policy, opt.name());
            }
        }
    }

    #[test]
    fn metric_sanity(seed in 0u64..1_000_000, kind in family_kind()) {
        let inst = small(seed, kind);
        for p in library_policies(&inst) {
            let r = evaluate_exact(&inst, p.as_ref()).unwrap();
            prop_assert!(r.eor >= r.pbm - 1e-12);
            prop_assert!(r.eor <= 1.0 + 1e-12);
            if r.eor > 0.0 {
                prop_assert!(r.eoir >= 1.0 / r.eor - 1e-9);
            }
            let total: f64 = r.ratio_distribution.iter().map(|&(_, q)| q).sum();
            prop_assert!((total - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn structured_and_enumerated_exact_agree(seed in 0u64..1_000_000, t in 0.0f64..10.0, at in 0.0f64..1.0) {
        let inst = small(seed, RandomFamily::Single);
        let p = prophet_lab::policies::fixed_threshold(&inst, (t * 4.0).round() / 4.0, at).unwrap();
        let fast = evaluate_exact(&inst, &p).unwrap();
        let slow = evaluate_exact_with(&inst, &p, &EvalOptions { structured: false, ..EvalOptions::default() }).unwrap();
        for (a, b) in [(fast.roe, slow.roe), (fast.eor, slow.eor), (fast.pbm, slow.pbm), (fast.pbm_p, slow.pbm_p)] {
            prop_assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn one_pass_paired_traces(seed in 0u64..1_000_000, kind in family_kind(), cut in 0usize..4, trial in 0u64..1000) {
        let inst = small(seed, kind);
        let n = inst.ground_size();
        let cut = cut.min(n);
        let order = inst.arrival_order().to_vec();
        let mut wrng = stream(seed, trial, Lane::Weights);
        let (mut w1, mut w2) = (Vec::new(), Vec::new());
        inst.dist().sample_into(&mut wrng, &mut w1);
        inst.dist().sample_into(&mut wrng, &mut w2);
        for &e in &order[..cut] {
            w2[e] = w1[e];
        }
        for p in library_policies(&inst) {
            let a = run_trace(&inst, p.as_ref(), &w1, &order, &mut RngChance(stream(seed, trial, Lane::Policy))).unwrap();
            let b = run_trace(&inst, p.as_ref(), &w2, &order, &mut RngChance(stream(seed, trial, Lane::Policy))).unwrap();
            prop_assert_eq!(&a.decisions[..cut], &b.decisions[..cut], "{}", p.name());
            prop_assert!(inst.family().is_feasible(&a.selected).unwrap());
        }
    }
}

proptest! {
    #![proptest_config(config(16))]

    #[test]
    fn monte_carlo_brackets_exact(seed in 0u64..1_000_000, kind in family_kind()) {
        let inst = small(seed, kind);
        let opts = EvalOptions::default();
        for p in library_policies(&inst) {
            let exact = evaluate_exact(&inst, p.as_ref()).unwrap();
            let mc = evaluate_monte_carlo_with(&inst, p.as_ref(), 20_000, seed, &opts).unwrap();
            let hw = mc.ci_halfwidth.unwrap();
            for (name, e, m, h) in [
                ("roe", exact.roe, mc.roe, hw.roe),
                ("eor", exact.eor, mc.eor, hw.eor),
                ("pbm", exact.pbm, mc.pbm, hw.pbm),
                ("ev", exact.expected_value, mc.expected_value, hw.expected_value),
            ] {
                prop_assert!((e - m).abs() <= 4.0 * h + 1e-9, "{} {name}: exact {e} mc {m} hw {h}", p.name());
            }
        }
    }

    #[test]
    fn sequential_and_parallel_identical(seed in 0u64..1_000_000, kind in family_kind()) {
        let inst = small(seed, kind);
        let seq = EvalOptions { exec: Execution::Sequential, ..EvalOptions::default() };
        let par = EvalOptions { exec: Execution::Parallel, ..EvalOptions::default() };
        for p in library_policies(&inst) {
            prop_assert_eq!(
                evaluate_exact_with(&inst, p.as_ref(), &seq).unwrap(),
                evaluate_exact_with(&inst, p.as_ref(), &par).unwrap()
            );
            prop_assert_eq!(
                evaluate_monte_carlo_with(&inst, p.as_ref(), 5000, seed, &seq).unwrap(),
                evaluate_monte_carlo_with(&inst, p.as_ref(), 5000, seed, &par).unwrap()
            );
        }
    }

    #[test]
    fn optimal_matches_exhaustive_search(seed in 0u64..1_000_000, three in any::<bool>(), kind in family_kind()) {
        let (n, atoms) = if three { (3, 2) } else { (2, 3) };
        let inst = random_instance(seed, &RandomSpec::new(kind, n, n, atoms));
        for obj in [Objective::Roe, Objective::Eor, Objective::Pbm] {
            let dp = optimal_policy(&inst, obj).unwrap().value();
            let brute = exhaustive_best(&inst, obj).unwrap();
            prop_assert!((dp - brute).abs() <= 1e-9 * brute.max(1.0), "{obj:?}: dp {dp} brute {brute}");
        }
    }
}
