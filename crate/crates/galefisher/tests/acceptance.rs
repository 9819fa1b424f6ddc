//! Acceptance suite: one test per criterion, each asserting the published
//! numbers and guarantees at their stated tolerances.

mod common;

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;

use galefisher::demand::{self, budget_audit_max};
use galefisher::equilibrium;
use galefisher::fixtures;
use galefisher::genflow;
use galefisher::model::Allocation;
use galefisher::nsw;
use galefisher::property::{self, Verdict};
use galefisher::utility;
use galefisher::UtilitySpec;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn criterion_01_eg1_equilibria() {
    let start = Instant::now();
    let inst = fixtures::eg1_instance();
    let first = Allocation::new(vec![vec![0.8, 0.2], vec![0.2, 0.8]]);
    let second = Allocation::new(vec![vec![0.7, 0.2], vec![0.3, 0.8]]);
    let r1 = equilibrium::verify_ce(&inst, &first, &[1.0, 1.0], 1e-9).unwrap();
    assert!(r1.is_ce, "first equilibrium must verify at 1e-9");
    let r2 = equilibrium::verify_thrifty(&inst, &second, &[1.3, 0.45], 1e-9).unwrap();
    assert!(r2.is_ce, "second equilibrium must verify at 1e-9");
    assert_eq!(r2.is_thrifty, Some(true), "second equilibrium is thrifty");
    assert!(
        start.elapsed().as_secs_f64() < 1.0,
        "verification must finish within a second"
    );
    println!("criterion 01 (two isolated equilibria): PASS");
}

#[test]
fn criterion_02_matching_gale_demands() {
    let u = fixtures::matching_utility();
    let g1 = demand::gale_demand(&u, &[0.3, 1.2, 0.1], 1.0).unwrap();
    let expected1 = [0.0, 103.0 / 198.0, 95.0 / 198.0];
    for (a, e) in g1.bundle.iter().zip(expected1) {
        assert!((a - e).abs() < 1e-4, "low-price bundle {:?}", g1.bundle);
    }
    let g2 = demand::gale_demand(&u, &[0.3, 1.2, 0.6], 1.0).unwrap();
    let expected2 = [5.0 / 9.0, 4.0 / 9.0, 0.0];
    for (a, e) in g2.bundle.iter().zip(expected2) {
        assert!((a - e).abs() < 1e-4, "high-price bundle {:?}", g2.bundle);
    }
    let w = property::check_substitutes_price(&u, 1.0, &[0.3, 1.2, 0.6], &[0.3, 1.2, 0.1]).unwrap();
    assert_eq!(w.verdict, Verdict::Violation);
    assert_eq!(w.violated_good, Some(1), "violation must sit on good 2");
    println!("criterion 02 (matching demands and violation): PASS");
}

#[test]
fn criterion_03_quadratic_example() {
    let report = fixtures::run_fixture("quadratic_submodular").unwrap();
    assert!(
        report.passed,
        "failed checks: {:?}",
        report.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>()
    );
    println!("criterion 03 (quadratic demand, direction ratio, violation): PASS");
}

#[test]
fn criterion_04_poa_tight_and_random() {
    let e = std::f64::consts::E;
    let bound = (1.0f64 / e).powf(1.0 / e);

    let inst = fixtures::poa_instance(1e-4);
    let ce = Allocation::new(vec![vec![1.0 / e, 0.0], vec![(e - 1.0) / e, 1.0]]);
    assert!(equilibrium::verify_ce(&inst, &ce, &[e, 0.0], 1e-9).unwrap().is_ce);
    let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default()).unwrap();
    let ratio = equilibrium::poa_check(&inst, &ce, &sol).unwrap();
    assert!(
        (ratio - bound).abs() < 1e-3,
        "tight fixture ratio {ratio} vs {bound}"
    );

    let outcomes: Vec<(usize, usize)> = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(4000 + seed);
            let n = rng.gen_range(2..=3);
            let m = rng.gen_range(2..=3);
            let inst = common::random_instance(&mut rng, n, m, false, |r, m| {
                common::random_separable(r, m)
            });
            let found = equilibrium::brute_force_ce(&inst, 14, false).unwrap();
            if found.is_empty() {
                return (0, 0);
            }
            let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default()).unwrap();
            let mut checked = 0;
            for eq in &found {
                let ratio = equilibrium::poa_check(&inst, &eq.allocation, &sol).unwrap();
                assert!(
                    ratio >= bound - 1e-3,
                    "seed {seed}: welfare ratio {ratio} under the bound"
                );
                checked += 1;
            }
            (1, checked)
        })
        .collect();
    let instances_with_ce: usize = outcomes.iter().map(|o| o.0).sum();
    let total_checked: usize = outcomes.iter().map(|o| o.1).sum();
    assert!(
        instances_with_ce >= 15,
        "grid found equilibria on too few instances: {instances_with_ce}"
    );
    println!(
        "criterion 04 (welfare floor at equilibria, {total_checked} equilibria over {instances_with_ce} instances): PASS"
    );
}

#[test]
fn criterion_05_two_approximate_suite() {
    // The tight fixture reproduces the closed-form best-response ratio.
    let inst = fixtures::approx_tight_instance(10.0);
    let achieved = utility::eval(&inst.agents[1].utility, &[0.1]).unwrap();
    let q = 1.0 / 0.9;
    let best = demand::demand(&inst.agents[1].utility, &[q], 1.0).unwrap().value;
    assert!(
        (best / achieved - 1.9).abs() < 1e-6,
        "best/achieved = {}",
        best / achieved
    );

    let results: Vec<()> = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(5000 + seed);
            let n = rng.gen_range(2..=4);
            let m = rng.gen_range(2..=3);
            let inst =
                common::random_instance(&mut rng, n, m, true, |r, m| common::random_any_family(r, m));
            let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default()).unwrap();
            let report =
                equilibrium::verify_approx_ce(&inst, &sol.allocation, &sol.prices, 2.0, 1e-4)
                    .unwrap();
            assert!(
                report.is_ce,
                "seed {seed}: output is not a 2-approximate equilibrium: {:#?} residual {:?}",
                report.agents, report.clearing_residual
            );
            let envy = equilibrium::envy_report(&inst, &sol.allocation).unwrap();
            assert!(envy.equal_budgets);
            assert!(
                envy.beta <= 2.0 + 1e-3,
                "seed {seed}: envy ratio {}",
                envy.beta
            );
        })
        .collect();
    assert_eq!(results.len(), 30);

    // The quadratic family joins through a dedicated instance; its domain is
    // restricted to the monotone region, so cross-agent envy evaluation does
    // not apply.
    let quad_inst = galefisher::MarketInstance {
        goods: vec!["g1".into(), "g2".into(), "g3".into()],
        agents: vec![
            galefisher::model::Agent {
                id: "q".into(),
                budget: 1.0,
                utility: fixtures::quadratic_utility(),
            },
            galefisher::model::Agent {
                id: "l".into(),
                budget: 1.0,
                utility: UtilitySpec::Linear {
                    values: vec![1.0, 1.2, 0.8],
                },
            },
        ],
    };
    let sol = nsw::solve_eg(&quad_inst, &nsw::EgOptions::default()).unwrap();
    let report =
        equilibrium::verify_approx_ce(&quad_inst, &sol.allocation, &sol.prices, 2.0, 1e-4).unwrap();
    assert!(report.is_ce, "quadratic instance: {:#?}", report.agents);
    println!("criterion 05 (2-approximate equilibria and envy): PASS");
}

#[test]
fn criterion_06_half_guarantee_suite() {
    let report = fixtures::run_fixture("main_tight").unwrap();
    assert!(report.passed, "{:#?}", report.checks);

    let outcomes: Vec<usize> = (0..30u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(6000 + seed);
            let n = rng.gen_range(2..=3);
            let m = rng.gen_range(2..=3);
            let inst = common::random_instance(&mut rng, n, m, false, |r, m| {
                common::random_separable(r, m)
            });
            let found = equilibrium::brute_force_ce(&inst, 14, true).unwrap();
            if found.is_empty() {
                return 0;
            }
            let sol = nsw::solve_eg(&inst, &nsw::EgOptions::default()).unwrap();
            for eq in &found {
                let ratios =
                    equilibrium::half_guarantee_check(&inst, &eq.allocation, &sol).unwrap();
                let min = ratios.iter().cloned().fold(f64::INFINITY, f64::min);
                assert!(
                    min >= 0.5 - 1e-3,
                    "seed {seed}: ratio {min} at prices {:?}",
                    eq.prices
                );
            }
            1
        })
        .collect();
    let with_ce: usize = outcomes.iter().sum();
    assert!(with_ce >= 15, "too few instances with equilibria: {with_ce}");
    println!("criterion 06 (half guarantee over {with_ce} instances): PASS");
}

#[test]
fn criterion_07_substitutes_validation() {
    // Separable and network families: no violations in either direction.
    let separable: Vec<()> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(7000 + seed);
            let m = rng.gen_range(2..=3);
            let u = common::random_separable(&mut rng, m);
            run_probes(&mut rng, &u, m, seed);
        })
        .collect();
    assert_eq!(separable.len(), 50);
    let networks: Vec<()> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(7500 + seed);
            let m = rng.gen_range(2..=3);
            let u = common::random_network(&mut rng, m, 2);
            run_probes(&mut rng, &u, m, seed);
        })
        .collect();
    assert_eq!(networks.len(), 50);

    // Satiation domination holds for capped separable utilities.
    for seed in 0..20u64 {
        let mut rng = common::rng(7900 + seed);
        let m = rng.gen_range(2..=3);
        let values: Vec<f64> = (0..m).map(|_| rng.gen_range(0.3..2.0)).collect();
        let caps = values.iter().map(|v| Some(v * rng.gen_range(0.3..1.2))).collect();
        let u = UtilitySpec::BoundedLinear { values, caps };
        let q = common::random_prices(&mut rng, m);
        let w = property::check_sigma(&u, 1.0, &q).unwrap();
        assert_eq!(w.verdict, Verdict::Pass, "seed {seed}: {w:?}");
    }

    // ... and fails on the capped-sum utility and the big satiated agent.
    let w = property::check_sigma(&fixtures::lf_capped_sum(), 1.0, &[2.0, 1.0]).unwrap();
    assert_eq!(w.verdict, Verdict::Violation);
    let inst = fixtures::lf_satiated_instance(3, 0.1, 100.0);
    let w = property::check_sigma(&inst.agents[3].utility, 100.0, &[1.0, 10.0, 10.0]).unwrap();
    assert_eq!(w.verdict, Verdict::Violation);
    println!("criterion 07 (substitutes validation, 100 utilities x 20 probes): PASS");
}

fn run_probes(rng: &mut rand_chacha::ChaCha8Rng, u: &UtilitySpec, m: usize, seed: u64) {
    for probe in 0..20 {
        let b = rng.gen_range(0.4..2.0);
        let q = common::random_prices(rng, m);
        let mut lowered = q.clone();
        let drop_count = rng.gen_range(1..=m.max(2) - 1);
        for _ in 0..drop_count {
            let j = rng.gen_range(0..m);
            lowered[j] = (lowered[j] * rng.gen_range(0.3..0.9)).min(lowered[j]);
        }
        let w = property::check_substitutes_price(u, b, &q, &lowered).unwrap();
        assert_ne!(
            w.verdict,
            Verdict::Violation,
            "seed {seed} probe {probe} price direction: {w:?}"
        );
        let b2 = b * rng.gen_range(0.3..0.95);
        let w = property::check_substitutes_budget(u, &q, b, b2).unwrap();
        assert_ne!(
            w.verdict,
            Verdict::Violation,
            "seed {seed} probe {probe} budget direction: {w:?}"
        );
    }
}

#[test]
fn criterion_08_flow_algorithm_contracts() {
    let results: Vec<()> = (0..50u64)
        .into_par_iter()
        .map(|seed| {
            let mut rng = common::rng(8000 + seed);
            let m = rng.gen_range(2..=3);
            let u = common::random_network(&mut rng, m, 2);
            let network = genflow::as_network(&u).unwrap();
            let q = common::random_prices(&mut rng, m);
            let b = 1.5;
            let b2 = 0.7;

            // Budget decrease: dominance, certification, objective match.
            let x = demand::gale_demand(&u, &q, b).unwrap();
            let out = genflow::budget_decrease(&u, &q, b, b2, &x.bundle).unwrap();
            for (a, r) in out.bundle.iter().zip(&x.bundle) {
                assert!(*a <= r + 1e-7, "seed {seed}: dominance broken");
            }
            let kkt = demand::verify_gale_kkt(&u, &q, b2, &out.bundle).unwrap();
            assert!(kkt.pass, "seed {seed}: budget KKT residual {}", kkt.residual);
            let oracle = demand::gale_demand(&u, &q, b2).unwrap();
            let value = utility::eval(&u, &out.bundle).unwrap();
            let objective = b2 * value.ln() - dot(&q, &out.bundle);
            assert!(
                (objective - oracle.objective).abs() < 1e-5,
                "seed {seed}: objective {objective} vs {}",
                oracle.objective
            );
            for state in &out.trace {
                let r = genflow::check_fitting(&network, &state.x, &state.flow, &state.potential)
                    .unwrap();
                assert!(r.ok, "seed {seed}: {:?} worst {}", r.detail, r.worst);
            }

            // Price decrease on one coordinate.
            let k = rng.gen_range(0..m);
            let mut q2 = q.clone();
            q2[k] *= rng.gen_range(0.4..0.8);
            let out = genflow::price_decrease(&u, &q, &q2, b, &x.bundle).unwrap();
            for (j, (a, r)) in out.bundle.iter().zip(&x.bundle).enumerate() {
                if j != k {
                    assert!(*a <= r + 1e-7, "seed {seed}: unchanged coordinate grew");
                }
            }
            let kkt = demand::verify_gale_kkt(&u, &q2, b, &out.bundle).unwrap();
            assert!(kkt.pass, "seed {seed}: price KKT residual {}", kkt.residual);
            let oracle = demand::gale_demand(&u, &q2, b).unwrap();
            let value = utility::eval(&u, &out.bundle).unwrap();
            let objective = b * value.ln() - dot(&q2, &out.bundle);
            assert!(
                (objective - oracle.objective).abs() < 1e-5,
                "seed {seed}: objective {objective} vs {}",
                oracle.objective
            );
            for state in &out.trace {
                let r = genflow::check_fitting(&network, &state.x, &state.flow, &state.potential)
                    .unwrap();
                assert!(r.ok, "seed {seed}: {:?} worst {}", r.detail, r.worst);
            }

            // Post-hoc path absence for the two flow subroutines.
            let compiled_sink = network
                .nodes
                .iter()
                .position(|n| n == &network.sink)
                .unwrap();
            let supply_nodes: Vec<usize> = network
                .supplies
                .iter()
                .map(|s| network.nodes.iter().position(|n| n == s).unwrap())
                .collect();
            let ones = vec![1.0; m];
            let pair = genflow::fitting_from_lp(&network, &ones).unwrap();
            let (x2, f2) =
                genflow::pullback_flow(&network, &ones, &pair.flow, &pair.potential).unwrap();
            let support: Vec<usize> = supply_nodes
                .iter()
                .enumerate()
                .filter(|&(g, _)| x2[g] > 1e-9)
                .map(|(_, &v)| v)
                .collect();
            assert!(
                !genflow::has_aux_path(&network, &f2, &pair.potential, &[compiled_sink], &support)
                    .unwrap(),
                "seed {seed}: pullback left a sink-to-supply path"
            );
            for k in 0..m {
                if pair.potential[supply_nodes[k]] <= 0.0 {
                    continue;
                }
                match genflow::reroute_flow(&network, &ones, &pair.flow, &pair.potential, k) {
                    Ok((x3, f3)) => {
                        let mut targets: Vec<usize> = supply_nodes
                            .iter()
                            .enumerate()
                            .filter(|&(g, _)| g != k && x3[g] > 1e-9)
                            .map(|(_, &v)| v)
                            .collect();
                        targets.push(compiled_sink);
                        assert!(
                            !genflow::has_aux_path(
                                &network,
                                &f3,
                                &pair.potential,
                                &[supply_nodes[k]],
                                &targets
                            )
                            .unwrap(),
                            "seed {seed}: reroute left a path from the grown good"
                        );
                    }
                    Err(galefisher::Error::UnboundedTransform(_)) => {}
                    Err(e) => panic!("seed {seed}: reroute failed: {e}"),
                }
            }
        })
        .collect();
    assert_eq!(results.len(), 50);
    println!("criterion 08 (flow transformation contracts, 50 networks): PASS");
}

#[test]
fn criterion_09_budget_lemma_audit() {
    // Feed the audit a battery of Gale demands across families, then check
    // the worst overshoot seen anywhere in this process.
    for seed in 0..40u64 {
        let mut rng = common::rng(9000 + seed);
        let m = rng.gen_range(2..=3);
        let u = common::random_any_family(&mut rng, m);
        let q = common::random_prices(&mut rng, m);
        let b = rng.gen_range(0.4..2.5);
        let _ = demand::gale_demand(&u, &q, b).unwrap();
    }
    for name in ["gale_nonmono", "matching_nonsub", "quadratic_submodular"] {
        fixtures::run_fixture(name).unwrap();
    }
    assert!(
        budget_audit_max() <= 1e-7,
        "worst budget overshoot {}",
        budget_audit_max()
    );
    println!("criterion 09 (budget lemma audit): PASS");
}

#[test]
fn criterion_10_gap_fixtures() {
    for name in ["gale_nonmono", "utility_gap", "inapprox_inverse"] {
        let report = fixtures::run_fixture(name).unwrap();
        assert!(
            report.passed,
            "{name}: {:?}",
            report.checks.iter().filter(|c| !c.passed).collect::<Vec<_>>()
        );
    }
    println!("criterion 10 (non-monotonicity and utility gaps): PASS");
}

#[test]
fn criterion_11_supergradient_correctness() {
    let families: [(&str, fn(&mut rand_chacha::ChaCha8Rng, usize) -> UtilitySpec); 5] = [
        ("linear", |r, m| common::random_linear(r, m)),
        ("bounded_linear", |r, m| common::random_bounded_linear(r, m)),
        ("splc", |r, m| common::random_splc(r, m, true)),
        ("leontief_free", |r, m| common::random_leontief_free(r, m)),
        ("gen_network", |r, m| common::random_network(r, m, 2)),
    ];
    for (name, make) in families {
        for probe in 0..100u64 {
            let mut rng = common::rng(11_000 + probe);
            let m = rng.gen_range(2..=3);
            let u = make(&mut rng, m);
            let x: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0)).collect();
            let t: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.5)).collect();
            let g = utility::supergradient(&u, &x).unwrap();
            let ux = utility::eval(&u, &x).unwrap();
            let ut = utility::eval(&u, &t).unwrap();
            let linearized = ux + dot(&g, &t) - dot(&g, &x);
            assert!(
                ut <= linearized + 1e-6,
                "{name} probe {probe}: {ut} > {linearized}"
            );
        }
    }

    // Quadratic gradients against central differences.
    let u = fixtures::quadratic_utility();
    let UtilitySpec::Quadratic(_) = &u else { unreachable!() };
    let h = 1e-5;
    for probe in 0..100u64 {
        let mut rng = common::rng(11_500 + probe);
        let x: Vec<f64> = (0..3).map(|_| rng.gen_range(0.085..0.105)).collect();
        if utility::eval(&u, &x).is_err() {
            continue;
        }
        let g = utility::supergradient(&u, &x).unwrap();
        for j in 0..3 {
            let mut hi = x.clone();
            hi[j] += h;
            let mut lo = x.clone();
            lo[j] -= h;
            let (Ok(uhi), Ok(ulo)) = (utility::eval(&u, &hi), utility::eval(&u, &lo)) else {
                continue;
            };
            let fd = (uhi - ulo) / (2.0 * h);
            assert!(
                (fd - g[j]).abs() <= 1e-5 * (1.0 + g[j].abs()),
                "probe {probe} coordinate {j}: fd {fd} vs gradient {}",
                g[j]
            );
        }
    }
    println!("criterion 11 (supergradient correctness): PASS");
}
